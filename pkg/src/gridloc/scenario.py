"""Event hypotheses and synthetic phase-angle measurements."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid_model import (
    ConnectivityError,
    GmrfModel,
    connected_components,
    gmrf_coefficients,
    invert_laplacian,
    reduce_matrix,
    full_laplacian,
)

RANK_CORRECTION_TOL = 1e-9


def is_connected(n_buses: int, lines: np.ndarray, mask: np.ndarray | None = None) -> bool:
    """True iff the lines selected by ``mask`` span all buses."""
    return len(connected_components(n_buses, lines, mask)) == 1


def nominal_state(model: GmrfModel) -> np.ndarray:
    """Pre-event angles ``B p`` with the reference entry at zero."""
    keep = model.keep
    return model.expand(model.B_reduced @ model.topology.injection[keep])


def injection_sigma(model: GmrfModel, noise_fraction: float) -> float:
    """Standard deviation of the per-bus injection perturbation."""
    return noise_fraction * float(np.mean(np.abs(model.topology.injection)))


@dataclass(frozen=True, eq=False)
class EventHypothesis:
    """One hypothesis ``R_k``: a set of anomalous lines and its post-event model."""

    index: int
    lines: tuple[int, ...]
    susceptance: np.ndarray
    H_reduced: np.ndarray
    B_reduced: np.ndarray
    beta: np.ndarray
    r: object
    theta_bar: np.ndarray
    model: GmrfModel

    @property
    def is_normal(self) -> bool:
        return not self.lines


def _rank_corrected_laplacian(model: GmrfModel, susceptance: np.ndarray) -> np.ndarray:
    """``H - sum_i (X0_ii - Xk_ii) m_i m_i^T`` in reduced coordinates."""
    diff = model.susceptance - susceptance
    changed = np.flatnonzero(diff)
    H = model.H_reduced.copy()
    Mr = model.incidence_reduced[:, changed].toarray()
    H -= (Mr * diff[changed]) @ Mr.T
    return H


def event_model(
    model: GmrfModel,
    lines: Iterable[int],
    post_reactances: Mapping[int, float] | None = None,
    index: int = 0,
) -> EventHypothesis:
    """Build the post-event model for lines ``lines``.

    Lines missing from ``post_reactances`` are taken out of service. The
    Laplacian is assembled twice, directly and as a rank correction of the
    pre-event one, and the two must agree.
    """
    lines = tuple(sorted(set(int(k) for k in lines)))
    post_reactances = dict(post_reactances or {})
    topo = model.topology
    susceptance = model.susceptance.copy()
    for k in lines:
        x = post_reactances.get(k, np.inf)
        if not x > 0:
            raise ValueError(f"line {topo.line_label(k)}: post-event reactance must be > 0")
        susceptance[k] = 0.0 if np.isinf(x) else 1.0 / x
    extra = set(post_reactances) - set(lines)
    if extra:
        raise ValueError(f"post_reactances given for lines outside the event: {sorted(extra)}")

    comps = connected_components(topo.n_buses, topo.lines, susceptance > 0)
    if len(comps) > 1:
        raise ConnectivityError([[int(topo.bus_ids[i]) for i in c] for c in comps])

    H_direct = reduce_matrix(full_laplacian(topo, susceptance), topo.reference)
    H_corr = _rank_corrected_laplacian(model, susceptance)
    gap = np.max(np.abs(H_direct - H_corr)) if H_direct.size else 0.0
    if gap > RANK_CORRECTION_TOL:
        raise AssertionError(f"rank-corrected Laplacian disagrees with direct assembly by {gap:.3g}")

    B = invert_laplacian(H_direct)
    beta, r = gmrf_coefficients(topo, susceptance)
    theta_bar = model.expand(B @ topo.injection[model.keep])
    return EventHypothesis(index, lines, susceptance, H_direct, B, beta, r, theta_bar, model)


class EventSet:
    """Ordered hypotheses ``R_0, R_1, ..., R_M``.

    ``R_0`` is always the empty set. Post-event models are built on first
    use and cached, which keeps very large grids affordable.
    """

    def __init__(self, model: GmrfModel, events: Sequence[tuple[int, ...]], eta_max: int | None = None):
        self.model = model
        self.events: tuple[tuple[int, ...], ...] = tuple(events)
        self.eta_max = eta_max if eta_max is not None else max((len(e) for e in events), default=0)
        self._cache: dict[int, EventHypothesis] = {}
        self._lookup = {e: k for k, e in enumerate(self.events)}

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, k: int) -> EventHypothesis:
        if k not in self._cache:
            self._cache[k] = event_model(self.model, self.events[k], index=k)
        return self._cache[k]

    def index_of(self, lines: Iterable[int]) -> int:
        return self._lookup[tuple(sorted(lines))]

    @cached_property
    def anomalous(self) -> tuple[int, ...]:
        return tuple(k for k, e in enumerate(self.events) if e)

    def label(self, k: int) -> str:
        if not self.events[k]:
            return "normal"
        return ",".join(self.model.topology.line_label(i) for i in self.events[k])


def enumerate_events(model: GmrfModel, mode="single_outage", eta_max: int | None = None) -> EventSet:
    """Hypothesis set for the grid.

    ``mode="single_outage"`` yields every single-line outage that keeps the
    grid connected. Otherwise ``mode`` is an explicit list of line sets,
    each validated for connectivity and size.
    """
    topo = model.topology
    n, lines = topo.n_buses, topo.lines
    if isinstance(mode, str):
        if mode != "single_outage":
            raise ValueError(f"unknown event mode {mode!r}")
        found = []
        mask = np.ones(topo.n_lines, dtype=bool)
        for k in range(topo.n_lines):
            mask[k] = False
            if is_connected(n, lines, mask):
                found.append((k,))
            mask[k] = True
        return EventSet(model, [()] + found, eta_max if eta_max is not None else 1)

    found = set()
    for event in mode:
        key = tuple(sorted(set(int(k) for k in event)))
        if not key:
            continue
        if any(k < 0 or k >= topo.n_lines for k in key):
            raise ValueError(f"event {list(event)} names a line outside 0..{topo.n_lines - 1}")
        if eta_max is not None and len(key) > eta_max:
            raise ValueError(f"event {[topo.line_label(k) for k in key]} exceeds eta_max={eta_max}")
        mask = np.ones(topo.n_lines, dtype=bool)
        mask[list(key)] = False
        if not is_connected(n, lines, mask):
            raise ConnectivityError(
                [[int(topo.bus_ids[i]) for i in c] for c in connected_components(n, lines, mask)]
            )
        found.add(key)
    ordered = sorted(found, key=lambda e: (len(e), e))
    return EventSet(model, [()] + ordered, eta_max)


def local_outage_events(model: GmrfModel, size: int) -> list[tuple[int, ...]]:
    """Outages of ``size`` lines clustered around each seed line.

    Starting from each line in turn, lines touching the current cluster are
    added in index order, skipping any that would disconnect the grid.
    """
    topo = model.topology
    incident: list[list[int]] = [[] for _ in range(topo.n_buses)]
    for k, (a, b) in enumerate(topo.lines):
        incident[a].append(k)
        incident[b].append(k)
    found = set()
    for seed in range(topo.n_lines):
        cluster = [seed]
        mask = np.ones(topo.n_lines, dtype=bool)
        mask[seed] = False
        if not is_connected(topo.n_buses, topo.lines, mask):
            continue
        while len(cluster) < size:
            touching = sorted(
                {k for c in cluster for end in topo.lines[c] for k in incident[end]} - set(cluster)
            )
            for k in touching:
                mask[k] = False
                if is_connected(topo.n_buses, topo.lines, mask):
                    cluster.append(k)
                    break
                mask[k] = True
            else:
                break
        if len(cluster) == size:
            found.add(tuple(sorted(cluster)))
    return sorted(found)


@dataclass(frozen=True)
class ScenarioConfig:
    true_event: int
    noise_fraction: float = 0.01
    eta_max: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.noise_fraction < 0:
            raise ValueError("noise_fraction must be >= 0")


def sample_measurement_state(
    event: EventHypothesis, noise_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Post-event angles under random injection perturbation.

    Draws ``n ~ N(0, sigma^2 I)`` on the non-reference buses and solves
    ``H_k theta = p + n``. With ``noise_fraction == 0`` the nominal
    post-event angles are returned exactly and ``rng`` is not touched.
    """
    model = event.model
    if noise_fraction == 0:
        return event.theta_bar.copy()
    sigma = injection_sigma(model, noise_fraction)
    p = model.topology.injection[model.keep] + sigma * rng.standard_normal(model.n_buses - 1)
    return model.expand(event.B_reduced @ p)


def sparse_outage_vector(model: GmrfModel, event: EventHypothesis, theta: np.ndarray) -> np.ndarray:
    """The line-indexed vector ``s_k`` that explains an angle vector.

    ``s[i] = (X0_ii - Xk_ii) * m_i^T theta`` for lines in the event, else 0,
    so that ``H (theta - theta_bar) = M s + n``.
    """
    s = np.zeros(model.n_lines)
    for i in event.lines:
        a, b = model.topology.lines[i]
        s[i] = (model.susceptance[i] - event.susceptance[i]) * (theta[a] - theta[b])
    return s
