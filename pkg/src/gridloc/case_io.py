"""Reading and writing grid case descriptions.

Two formats are understood:

* MATPOWER ``.m`` case files. Only ``baseMVA`` and the ``bus``, ``branch``
  and ``gen`` matrices are interpreted; everything else is ignored.
* A native JSON document::

      {"base_mva": 100.0,
       "buses": [{"id": 1, "type": "slack", "injection": 2.324}, ...],
       "branches": [{"from": 1, "to": 2, "x": 0.05917, "status": 1}, ...]}

Injections are net active power (generation minus load) in per-unit.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

BUS_TYPES = {1: "PQ", 2: "PV", 3: "slack"}

# MATPOWER column positions (0-based)
BUS_I, BUS_TYPE, PD = 0, 1, 2
F_BUS, T_BUS, BR_X, BR_STATUS = 0, 1, 3, 10
GEN_BUS, PG, GEN_STATUS = 0, 1, 7

_MIN_COLUMNS = {"bus": 3, "branch": 4, "gen": 2}


class CaseError(ValueError):
    """Base class for every case ingestion failure."""


class CaseParseError(CaseError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingSectionError(CaseError):
    def __init__(self, section: str):
        self.section = section
        super().__init__(f"missing section: {section}")


class CaseValidationError(CaseError):
    pass


class SchemaError(CaseError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    injection: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    x: float
    in_service: bool = True


@dataclass(frozen=True)
class RawCase:
    """Grid data as read from a file.

    Buses are kept sorted by id; branches keep file order, including
    out-of-service ones.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "branches", tuple(self.branches))
        self.validate()

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseValidationError(f"duplicate bus id(s): {dup}")
        for b in self.buses:
            if b.type not in BUS_TYPES.values():
                raise CaseValidationError(f"bus {b.id}: unknown type {b.type!r}")
        n_slack = sum(b.type == "slack" for b in self.buses)
        if n_slack > 1:
            raise CaseValidationError(f"{n_slack} slack buses; at most one allowed")
        known = set(ids)
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseValidationError(f"branch {k}: unknown bus {end}")
            if br.in_service and not br.x > 0:
                raise CaseValidationError(
                    f"branch {k} ({br.from_bus}-{br.to_bus}): in-service reactance must be > 0, got {br.x}"
                )

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)


# ---------------------------------------------------------------- MATPOWER

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    # '%' never appears inside numeric tables; string tables are skipped anyway
    return line.split("%", 1)[0]


def _parse_matrix(lines: list[str], start: int, first: str, name: str) -> tuple[list[tuple[int, list[float]]], int]:
    """Read a ``[ ... ];`` block. Returns ``(rows, next_line_index)``.

    Each row carries its 1-based source line number.
    """
    rows: list[tuple[int, list[float]]] = []
    body = first.split("[", 1)[1]
    i = start
    while True:
        text = _strip_comment(body)
        closed = "]" in text
        if closed:
            text = text.split("]", 1)[0]
        for chunk in text.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append((i + 1, [float(t) for t in tokens]))
            except ValueError as exc:
                raise CaseParseError(f"non-numeric entry in mpc.{name}: {exc}", i + 1) from None
        if closed:
            return rows, i + 1
        i += 1
        if i >= len(lines):
            raise CaseParseError(f"unterminated matrix mpc.{name}", start + 1)
        body = lines[i]


def _check_columns(rows: list[tuple[int, list[float]]], name: str) -> None:
    if not rows:
        return
    width = len(rows[0][1])
    if width < _MIN_COLUMNS[name]:
        raise CaseParseError(
            f"mpc.{name} needs at least {_MIN_COLUMNS[name]} columns, found {width}", rows[0][0]
        )
    for lineno, row in rows:
        if len(row) != width:
            raise CaseParseError(f"mpc.{name} row has {len(row)} columns, expected {width}", lineno)


def parse_matpower_case(text: str) -> RawCase:
    """Parse MATPOWER case text into a :class:`RawCase`.

    Net injection at each bus is ``(sum of in-service PG - PD) / baseMVA``.
    Branches with status 0 are kept and flagged out of service.
    """
    lines = text.splitlines()
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    base_mva = None
    i = 0
    while i < len(lines):
        m = _ASSIGN.match(_strip_comment(lines[i]))
        if not m:
            i += 1
            continue
        name, rhs = m.groups()
        if name == "baseMVA":
            try:
                base_mva = float(rhs.rstrip().rstrip(";"))
            except ValueError:
                raise CaseParseError("baseMVA is not a number", i + 1) from None
            i += 1
        elif name in _MIN_COLUMNS and "[" in rhs:
            rows, i = _parse_matrix(lines, i, rhs, name)
            tables[name] = rows
        else:
            i += 1

    if base_mva is None:
        raise MissingSectionError("baseMVA")
    for section in ("bus", "branch"):
        if section not in tables:
            raise MissingSectionError(section)
    if base_mva <= 0:
        raise CaseValidationError(f"baseMVA must be positive, got {base_mva}")
    for name, rows in tables.items():
        _check_columns(rows, name)

    generation: dict[int, float] = {}
    for _, row in tables.get("gen", []):
        if len(row) > GEN_STATUS and row[GEN_STATUS] <= 0:
            continue
        bus = int(row[GEN_BUS])
        generation[bus] = generation.get(bus, 0.0) + row[PG]

    buses = []
    for lineno, row in tables["bus"]:
        code = int(row[BUS_TYPE])
        if code not in BUS_TYPES:
            raise CaseParseError(f"unsupported bus type {code}", lineno)
        bus_id = int(row[BUS_I])
        p = (generation.get(bus_id, 0.0) - row[PD]) / base_mva
        buses.append(Bus(bus_id, BUS_TYPES[code], p))

    known = {b.id for b in buses}
    missing = sorted(set(generation) - known)
    if missing:
        raise CaseValidationError(f"generator(s) at unknown bus(es) {missing}")

    branches = []
    for _, row in tables["branch"]:
        status = row[BR_STATUS] > 0 if len(row) > BR_STATUS else True
        branches.append(Branch(int(row[F_BUS]), int(row[T_BUS]), row[BR_X], status))

    return RawCase(base_mva, tuple(buses), tuple(branches))


# ------------------------------------------------------------------ native

NATIVE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "buses", "branches"],
    "properties": {
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "type", "injection"],
                "properties": {
                    "id": {"type": "integer"},
                    "type": {"enum": list(BUS_TYPES.values())},
                    "injection": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "x", "status"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "x": {"type": "number"},
                    "status": {"enum": [0, 1]},
                },
                "additionalProperties": False,
            },
        },
    },
}


def parse_native_case(text: str) -> RawCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    try:
        jsonschema.validate(doc, NATIVE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = [str(p) for p in exc.absolute_path]
        if exc.validator == "required" and isinstance(exc.instance, dict):
            path += [k for k in exc.validator_value if k not in exc.instance][:1]
        field = "/".join(path) or "<root>"
        raise SchemaError(field, exc.message) from None
    buses = tuple(Bus(b["id"], b["type"], float(b["injection"])) for b in doc["buses"])
    branches = tuple(
        Branch(br["from"], br["to"], float(br["x"]), br["status"] == 1) for br in doc["branches"]
    )
    return RawCase(float(doc["base_mva"]), buses, branches)


def serialize_native(case: RawCase) -> str:
    case.validate()
    doc = {
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "type": b.type, "injection": b.injection} for b in case.buses],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "x": br.x, "status": int(br.in_service)}
            for br in case.branches
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


# ------------------------------------------------------------------- files

BUILTIN_CASES = ("case14", "case118", "case2383wp")


def builtin_case_text(name: str) -> str:
    if name not in BUILTIN_CASES:
        raise KeyError(f"no bundled case named {name!r}; choose from {BUILTIN_CASES}")
    return resources.files("gridloc.data").joinpath(f"{name}.m").read_text()


def load_case(source: str | Path) -> RawCase:
    """Load a case from a path or a bundled case name.

    The format is chosen by extension: ``.m`` is MATPOWER, ``.json`` is native.
    """
    source = str(source)
    if source in BUILTIN_CASES:
        return parse_matpower_case(builtin_case_text(source))
    path = Path(source)
    text = path.read_text()
    if path.suffix == ".m":
        return parse_matpower_case(text)
    if path.suffix == ".json":
        return parse_native_case(text)
    raise CaseError(f"{path}: unrecognised extension {path.suffix!r} (expected .m or .json)")


def save_native(case: RawCase, path: str | Path) -> None:
    Path(path).write_text(serialize_native(case))
