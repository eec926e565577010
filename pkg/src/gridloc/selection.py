"""Bus scoring and data-adaptive bus selection.

The information a bus ``j`` carries about bus ``i`` is scored through the
coupling coefficient ``r_ij``. Two per-neighbor terms are used:

* variant 0: ``log 1/(1 - r^2)``, the divergence of a correlated Gaussian
  pair from its independent counterpart;
* variant 1: ``log(1 - r^2) + 2 r^2 / (1 - r^2)``, the divergence taken in
  the opposite direction.

A leaf bus has ``r = 1`` with its only neighbor, so ``r`` is clamped to
``1 - 1e-6`` inside every logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .grid_model import GmrfModel

R_CLAMP = 1.0 - 1e-6


def clamp(r):
    return np.minimum(r, R_CLAMP)


def subset_term(r, variant: int = 0):
    """Per-neighbor information term for coupling ``r``."""
    r2 = clamp(np.asarray(r, dtype=float)) ** 2
    if variant == 0:
        return -np.log1p(-r2)
    if variant == 1:
        return np.log1p(-r2) + 2.0 * r2 / (1.0 - r2)
    raise ValueError(f"variant must be 0 or 1, got {variant}")


def observed_term(r, delta, variant: int = 0):
    """Contribution of an already-observed neighbor with deviation ``delta``."""
    r2 = clamp(np.asarray(r, dtype=float)) ** 2
    d2 = np.asarray(delta, dtype=float) ** 2
    if variant == 0:
        return -np.log1p(-r2) + r2 * (d2 - 1.0)
    return np.log1p(-r2) + r2 * (d2 + 1.0) / (1.0 - r2)


def restricted_subset_score(
    r_row: Mapping[int, float],
    candidates: Iterable[int],
    variant: int = 0,
    count_self: bool = False,
) -> tuple[float, tuple[int, ...]]:
    """Best mean information over subsets of ``candidates``.

    The mean over a fixed number of elements is largest for the top
    elements, so only prefixes of the terms sorted in decreasing order are
    tried. With ``count_self`` the scored bus is counted in the denominator
    (it contributes a zero term), as when the subset must contain it.

    Returns the score and the chosen subset; on a tie the larger subset is
    kept. An empty candidate set scores 0.
    """
    cands = list(candidates)
    if not cands:
        return 0.0, ()
    vals = subset_term([r_row.get(j, 0.0) for j in cands], variant)
    order = sorted(range(len(cands)), key=lambda k: (-vals[k], cands[k]))
    best, best_k, total = -np.inf, 0, 0.0
    for k, idx in enumerate(order, start=1):
        total += vals[idx]
        mean = total / (k + count_self)
        if mean >= best:
            best, best_k = mean, k
    if count_self and best < 0.0:
        return 0.0, ()
    return float(best), tuple(sorted(cands[i] for i in order[:best_k]))


@dataclass
class SelectionState:
    """Trial-local record of what has been observed so far."""

    ell: int
    static_scores: np.ndarray
    observed: list[int] = field(default_factory=list)
    delta: dict[int, float] = field(default_factory=dict)
    evaluations: list[int] = field(default_factory=list)
    anchors: list[int] = field(default_factory=list)
    fallbacks: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be >= 1")

    def record(self, buses: Iterable[int], theta: np.ndarray, theta_bar: np.ndarray) -> None:
        for b in buses:
            b = int(b)
            if b in self.delta:
                raise ValueError(f"bus {b} observed twice")
            self.observed.append(b)
            self.delta[b] = float(theta[b] - theta_bar[b])

    def unobserved(self, n_buses: int) -> list[int]:
        return [i for i in range(n_buses) if i not in self.delta]


def _first_sum(i: int, state: SelectionState, r_row: Mapping[int, float], variant: int) -> float:
    # r_ij = 0 off the neighborhood, so only observed neighbors contribute
    js = [j for j in state.observed if j in r_row and j != i]
    if not js:
        return 0.0
    r = np.array([r_row[j] for j in js])
    d = np.array([state.delta[j] for j in js])
    return 0.5 * float(np.sum(observed_term(r, d, variant)))


def binary_metrics(
    i: int, state: SelectionState, r_row: Mapping[int, float], S: Iterable[int]
) -> tuple[float, float]:
    """Both binary-hypothesis metrics of bus ``i`` for candidate set ``S``.

    ``S`` holds unobserved buses and includes ``i``; its size normalizes
    only the unobserved-set term.
    """
    S = list(S)
    if i not in S:
        raise ValueError("candidate set must contain the scored bus")
    out = []
    for variant in (0, 1):
        vals = subset_term([r_row.get(j, 0.0) if j != i else 0.0 for j in S], variant)
        out.append(_first_sum(i, state, r_row, variant) + 0.5 * float(np.sum(vals)) / len(S))
    return out[0], out[1]


def general_metric(i: int, state: SelectionState, r_k_row: Mapping[int, float], S: Iterable[int]) -> float:
    """Event-specific metric: the variant-0 metric under that event's couplings."""
    return binary_metrics(i, state, r_k_row, S)[0]


def best_metric(
    i: int, state: SelectionState, r_row: Mapping[int, float], pool: Iterable[int], variant: int = 0
) -> tuple[float, tuple[int, ...]]:
    """Metric of ``i`` maximized over sets ``{i} | U`` with ``U`` drawn from ``pool``."""
    pool = [j for j in pool if j != i]
    score, subset = restricted_subset_score(r_row, pool, variant, count_self=True)
    return _first_sum(i, state, r_row, variant) + 0.5 * score, (i,) + subset


def neighbor_restricted_argmax(state: SelectionState, model: GmrfModel, variant: int = 0) -> int:
    """Unobserved bus with the largest metric, searching only unobserved neighbors."""
    best, arg = -np.inf, -1
    for i in state.unobserved(model.n_buses):
        row = model.coupling_row(i)
        pool = [j for j in model.topology.neighbors[i] if j not in state.delta]
        value, _ = best_metric(i, state, row, pool, variant)
        if value > best:
            best, arg = value, i
    return arg


def static_scores(model: GmrfModel) -> np.ndarray:
    """Per-bus score computed once before sampling: best mean term over neighbor subsets."""
    return np.array(
        [restricted_subset_score(model.coupling_row(i), model.topology.neighbors[i])[0] for i in range(model.n_buses)]
    )


def select_initial(model: GmrfModel, ell: int) -> list[int]:
    """The ``ell`` highest-degree buses.

    Within a degree class, buses not adjacent to an already chosen bus come
    first, then lower index. This spreads the first readings over the grid.
    """
    n = model.n_buses
    if ell > n:
        raise ValueError(f"cannot select {ell} buses from a grid of {n}")
    deg = model.topology.degree
    nbrs = model.topology.neighbors
    chosen: list[int] = []
    covered: set[int] = set()
    for d in sorted(set(deg.tolist()), reverse=True):
        pending = [i for i in range(n) if deg[i] == d]
        while pending and len(chosen) < ell:
            pick = next((i for i in pending if i not in covered), pending[0])
            pending.remove(pick)
            chosen.append(pick)
            covered.update(nbrs[pick])
        if len(chosen) == ell:
            break
    return chosen


def select_next(state: SelectionState, model: GmrfModel, rule: str = "two_stage") -> list[int]:
    """Buses to read at the next step.

    ``two_stage``: walk the observed buses by decreasing ``|delta theta|``
    and take each one's unobserved neighbors by decreasing static score
    until ``ell`` are gathered; if the neighborhoods run dry, fill up with
    the best remaining buses by static score.

    ``global``: score every unobserved bus with the full time-varying
    metric and keep the best ``ell`` (the exhaustive baseline).

    Per step, the number of candidates whose metric is examined goes to
    ``state.evaluations``, the number of anchors consulted to
    ``state.anchors`` and the number of buses filled from the precomputed
    ranking to ``state.fallbacks``.
    """
    unobserved = state.unobserved(model.n_buses)
    if not unobserved:
        return []
    need = min(state.ell, len(unobserved))
    scores = state.static_scores

    if rule == "global":
        values = []
        for i in unobserved:
            value, _ = best_metric(i, state, model.coupling_row(i), unobserved)
            values.append((-value, i))
        values.sort()
        state.evaluations.append(len(unobserved))
        state.anchors.append(0)
        state.fallbacks.append(0)
        return [i for _, i in values[:need]]
    if rule != "two_stage":
        raise ValueError(f"unknown selection rule {rule!r}")

    free = set(unobserved)
    chosen: list[int] = []
    evaluations = consulted = 0
    anchors = sorted(state.observed, key=lambda j: (-abs(state.delta[j]), j))
    for a in anchors:
        if len(chosen) == need:
            break
        consulted += 1
        cands = [j for j in model.topology.neighbors[a] if j in free]
        evaluations += len(cands)
        cands.sort(key=lambda j: (-scores[j], j))
        take = cands[: need - len(chosen)]
        chosen.extend(take)
        free.difference_update(take)
    filled = need - len(chosen)
    if filled:
        rest = sorted(free, key=lambda j: (-scores[j], j))
        chosen.extend(rest[:filled])
    state.evaluations.append(evaluations)
    state.anchors.append(consulted)
    state.fallbacks.append(filled)
    return chosen
