"""Command-line entry point: ``gridloc <command> ...``.

Exit status is 0 on success, 2 when a case, event or config fails to parse
or validate, and 3 when a run ends on a degenerate observation.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import oracle
from .case_io import CaseError, load_case, save_native
from .decision import DegenerateObservationError, calibrate_threshold
from .engine import (
    MODES,
    RunConfig,
    build_events,
    load_sweep_config,
    observation_system,
    record_to_dict,
    run_accuracy_sweep,
    run_trial,
    trial_state,
    whitening_sigma,
    write_csv,
)
from .grid_model import ConnectivityError, build_topology, model_from_case
from .scenario import EventSet

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 2, 3


class UsageError(ValueError):
    pass


def parse_event(spec: str, model, events: EventSet) -> int | None:
    """Event index from ``random``, ``normal`` or bus-id pairs such as ``9-14,13-14``."""
    spec = spec.strip()
    if spec == "random":
        return None
    if spec == "normal":
        return 0
    lines = []
    for part in spec.split(","):
        try:
            a, b = (int(v) for v in part.split("-"))
            lines.append(model.topology.line_between(a, b))
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad event {part!r}: expected bus-id pairs like 9-14 ({exc})") from None
    try:
        return events.index_of(lines)
    except KeyError:
        raise UsageError(f"event {spec!r} is not in the hypothesis set (it may disconnect the grid)") from None


def _cmd_import(args) -> int:
    case = load_case(args.case)
    save_native(case, args.out)
    print(f"wrote {args.out}: {case.n_buses} buses, {case.n_branches} branches")
    return EXIT_OK


def _cmd_validate(args) -> int:
    case = load_case(args.case)
    topo = build_topology(case)
    for w in topo.warnings:
        print(f"warning: {w}")
    print(
        f"ok: {topo.n_buses} buses, {topo.n_lines} lines, reference bus {topo.bus_ids[topo.reference]}, "
        f"max degree {int(topo.degree.max())}"
    )
    return EXIT_OK


def _verify(model, events, cfg, record, seed) -> list[str]:
    """Oracle cross-checks that fit the instance size."""
    out = []
    topo = model.topology
    for k in events.anomalous:
        mask = np.ones(topo.n_lines, dtype=bool)
        mask[list(events.events[k])] = False
        if not oracle.union_find_connected(topo.n_buses, topo.lines, mask):
            out.append(f"connectivity: event {events.label(k)} disconnects the grid")
    n_first = min(record.ell, len(record.observed)) if cfg.mode == "adaptive" else len(record.observed)
    expected = oracle.degree_sort_oracle(topo.lines, topo.n_buses, n_first)
    if cfg.mode != "full" and sorted(expected) != sorted(record.observed[:n_first]):
        out.append(f"initial selection {record.observed[:n_first]} differs from degree oracle {expected}")
    if events.eta_max <= oracle.MAX_SUPPORT:
        _, theta = trial_state(events, cfg, np.random.default_rng(seed))
        system = observation_system(model, list(record.observed), theta, whitening_sigma(model, cfg.noise_fraction))
        if system is not None:
            best, res = oracle.exhaustive_support_oracle(system, max(events.eta_max, 1))
            if not record.forced_stop and set(best) != set(record.support):
                out.append(f"support {record.support} differs from exhaustive oracle {best} (residual {res:.3g})")
    return out


def _cmd_run(args) -> int:
    model = model_from_case(load_case(args.case))
    events = build_events(model, "single_outage", args.eta_max)
    true_event = parse_event(args.event, model, events)
    if args.beta is not None:
        gamma = calibrate_threshold(model, events, args.noise, args.beta, args.calib_trials, args.seed + 10**6, args.ell).gamma
    else:
        gamma = args.gamma
    cfg = RunConfig(
        ell=args.ell,
        gamma=gamma,
        eta_max=events.eta_max,
        noise_fraction=args.noise,
        budget=args.budget,
        mode=args.mode,
        true_event=true_event,
    )
    record = run_trial(model, events, cfg, np.random.default_rng(args.seed), seed=args.seed)
    doc = record_to_dict(record)
    doc["gamma"] = gamma
    doc["true_label"] = events.label(record.true_event)
    doc["decided_label"] = events.label(record.decided_event)
    doc["observed_ids"] = [int(model.topology.bus_ids[b]) for b in record.observed]
    if args.verify:
        problems = _verify(model, events, cfg, record, args.seed)
        doc["verify"] = problems or "ok"
    print(json.dumps(doc, indent=2, default=float))
    if record.degenerate:
        print("error: only the reference bus was observed; no decision possible", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_sweep_config(args.config)
    rows = run_accuracy_sweep(cfg)
    write_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    model = model_from_case(load_case(args.case))
    events = build_events(model, "single_outage", args.eta_max)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = calibrate_threshold(model, events, args.noise, args.beta, args.trials, args.seed, args.ell)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(json.dumps({"gamma": res.gamma, "error": res.error, "attained": res.attained, "beta": args.beta}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="convert a case to the native JSON format")
    s.add_argument("case", help="built-in case name or path to a .m / .json file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_import)

    s = sub.add_parser("validate", help="parse a case and check that it forms a connected grid")
    s.add_argument("case")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("run", help="simulate one localization trial")
    s.add_argument("--case", required=True)
    s.add_argument("--event", default="random", help="'random', 'normal' or bus-id pairs like 9-14")
    s.add_argument("--ell", type=int, default=1)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--gamma", type=float)
    g.add_argument("--beta", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int)
    s.add_argument("--mode", choices=MODES, default="adaptive")
    s.add_argument("--noise", type=float, default=0.01, help="injection noise as a fraction of mean |injection|")
    s.add_argument("--eta-max", type=int, default=1)
    s.add_argument("--calib-trials", type=int, default=200)
    s.add_argument("--verify", action="store_true", help="cross-check against brute-force oracles")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo accuracy sweep to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("calibrate", help="choose the stopping threshold for an error target")
    s.add_argument("--case", required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--trials", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ell", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--eta-max", type=int, default=1)
    s.set_defaults(func=_cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DegenerateObservationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (CaseError, ConnectivityError, UsageError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
