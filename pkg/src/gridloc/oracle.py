"""Brute-force reference implementations.

Slow and simple on purpose: each function recomputes a quantity that the
fast path obtains by some shortcut, so the two can be checked against each
other.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .decision import WhitenedSystem
from .selection import SelectionState, observed_term, subset_term

MAX_EXHAUSTIVE_BUSES = 12
MAX_SUPPORT = 2


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def marginal(self, idx) -> "GaussianModel":
        idx = list(idx)
        return GaussianModel(self.mean[idx], self.cov[np.ix_(idx, idx)])


def gaussian_kl(p: GaussianModel, q: GaussianModel) -> float:
    """Closed-form ``KL(p || q)`` between multivariate normals."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    q_inv = np.linalg.inv(q.cov)
    diff = q.mean - p.mean
    _, logdet_q = np.linalg.slogdet(q.cov)
    _, logdet_p = np.linalg.slogdet(p.cov)
    return 0.5 * float(np.trace(q_inv @ p.cov) + diff @ q_inv @ diff - p.dim + logdet_q - logdet_p)


def product_of_marginals(g: GaussianModel, blocks) -> GaussianModel:
    """Joint law that keeps each block's marginal and makes blocks independent."""
    order = [i for b in blocks for i in b]
    cov = np.zeros((len(order), len(order)))
    pos = 0
    for b in blocks:
        k = len(b)
        cov[pos : pos + k, pos : pos + k] = g.cov[np.ix_(b, b)]
        pos += k
    return GaussianModel(g.mean[order], cov)


def _metric(i, S, state, r_row, variant):
    js = [j for j in state.observed if j in r_row and j != i]
    first = 0.0
    if js:
        first = 0.5 * float(np.sum(observed_term([r_row[j] for j in js], [state.delta[j] for j in js], variant)))
    terms = subset_term([r_row.get(j, 0.0) if j != i else 0.0 for j in S], variant)
    return first + 0.5 * float(np.sum(terms)) / len(S)


def exhaustive_metric(i: int, state: SelectionState, r_row, pool, variant: int = 0) -> float:
    """Largest metric of ``i`` over every subset of ``pool`` joined with ``i``."""
    others = [j for j in pool if j != i]
    best = -np.inf
    for k in range(len(others) + 1):
        for extra in combinations(others, k):
            best = max(best, _metric(i, (i,) + extra, state, r_row, variant))
    return best


def exhaustive_selection_argmax(state: SelectionState, model, variant: int = 0, tol: float = 1e-12) -> int:
    """Best unobserved bus when every subset of unobserved buses is considered.

    Values within ``tol`` of the maximum count as ties, which go to the
    lowest position.
    """
    n = model.n_buses
    if n > MAX_EXHAUSTIVE_BUSES:
        raise OracleSizeError(f"exhaustive selection refuses N={n} > {MAX_EXHAUSTIVE_BUSES}")
    unobserved = [i for i in range(n) if i not in state.delta]
    if not unobserved:
        raise ValueError("every bus is already observed")
    values = np.array([exhaustive_metric(i, state, model.coupling_row(i), unobserved, variant) for i in unobserved])
    return unobserved[int(np.flatnonzero(values >= values.max() - tol)[0])]


def exhaustive_support_oracle(system: WhitenedSystem, k_max: int = 1) -> tuple[tuple[int, ...], float]:
    """Residual-minimizing support of size at most ``k_max`` by enumeration.

    Returns the support and its least-squares residual norm. Smaller and
    lexicographically earlier supports win ties.
    """
    if k_max > MAX_SUPPORT:
        raise OracleSizeError(f"support enumeration refuses k_max={k_max} > {MAX_SUPPORT}")
    y, A = system.y, system.A
    best, best_res = (), float(np.linalg.norm(y))
    for k in range(1, k_max + 1):
        for T in combinations(range(A.shape[1]), k):
            A_T = A[:, T]
            coef, *_ = np.linalg.lstsq(A_T, y, rcond=None)
            res = float(np.linalg.norm(y - A_T @ coef))
            if res < best_res - 1e-12 * max(1.0, best_res):
                best, best_res = T, res
    return best, best_res


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb
            return True
        return False


def union_find_connected(n: int, lines, mask=None) -> bool:
    uf = _UnionFind(n)
    pieces = n
    for k, (a, b) in enumerate(lines):
        if mask is None or mask[k]:
            pieces -= uf.union(int(a), int(b))
    return pieces == 1


def degree_sort_oracle(lines, n: int, k: int) -> list[int]:
    """Top-``k`` buses by degree counted from the raw line list.

    Ties within a degree go first to buses with no neighbor among those
    already picked, then to the lower position.
    """
    deg = np.zeros(n, dtype=int)
    adj = [set() for _ in range(n)]
    for a, b in lines:
        if b not in adj[a]:
            deg[a] += 1
            deg[b] += 1
            adj[a].add(int(b))
            adj[b].add(int(a))
    picked: list[int] = []
    remaining = set(range(n))
    while len(picked) < k:
        top = max(deg[i] for i in remaining)
        tier = sorted(i for i in remaining if deg[i] == top)
        fresh = [i for i in tier if not adj[i] & set(picked)]
        choice = (fresh or tier)[0]
        picked.append(choice)
        remaining.discard(choice)
    return picked
