"""DC power-flow graph model of a grid.

Buses are addressed by position ``0..N-1`` (sorted bus id order); lines by
position ``0..L-1``. Angle vectors handed to callers are full length ``N``
with the reference entry fixed at zero, while the Laplacian and its
inverse live in the reduced ``(N-1)``-dimensional space.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .case_io import RawCase


class ConnectivityError(ValueError):
    def __init__(self, components: list[list[int]]):
        self.components = components
        shown = "; ".join(str(c[:10]) + (" ..." if len(c) > 10 else "") for c in components)
        super().__init__(f"graph is disconnected into {len(components)} components: {shown}")


class SingularLaplacianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class GridTopology:
    """Connected in-service network with merged parallel lines.

    Attributes
    ----------
    bus_ids : ndarray of int, shape (N,)
    lines : ndarray of int, shape (L, 2)
        ``(from, to)`` bus positions; column order of the incidence matrix.
    reactance : ndarray, shape (L,)
    reference : int
        Position of the angle reference bus.
    injection : ndarray, shape (N,)
        Nominal net injections in per-unit.
    warnings : tuple of str
        One entry per merged group of parallel branches.
    """

    bus_ids: np.ndarray
    lines: np.ndarray
    reactance: np.ndarray
    reference: int
    injection: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_buses(self) -> int:
        return len(self.bus_ids)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[set[int]] = [set() for _ in range(self.n_buses)]
        for a, b in self.lines:
            adj[a].add(int(b))
            adj[b].add(int(a))
        return tuple(tuple(sorted(s)) for s in adj)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors])

    @cached_property
    def _position(self) -> dict[int, int]:
        return {int(b): i for i, b in enumerate(self.bus_ids)}

    def position(self, bus_id: int) -> int:
        return self._position[bus_id]

    def line_between(self, bus_a: int, bus_b: int) -> int:
        """Line position joining two bus *ids*."""
        a, b = self.position(bus_a), self.position(bus_b)
        for k, (u, v) in enumerate(self.lines):
            if (u, v) in ((a, b), (b, a)):
                return k
        raise KeyError(f"no line between buses {bus_a} and {bus_b}")

    def line_label(self, k: int) -> str:
        a, b = self.lines[k]
        return f"{self.bus_ids[a]}-{self.bus_ids[b]}"


def connected_components(n: int, lines: np.ndarray, mask: np.ndarray | None = None) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for k, (a, b) in enumerate(lines):
        if mask is None or mask[k]:
            adj[a].append(int(b))
            adj[b].append(int(a))
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = [start], deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def build_topology(case: RawCase) -> GridTopology:
    """Turn a parsed case into a connected graph.

    Out-of-service branches are dropped and parallel branches are merged
    into one line of reactance ``1 / sum(1/x)``. The reference is the slack
    bus, or else the highest-degree bus (lowest id on ties).
    """
    bus_ids = np.array([b.id for b in case.buses], dtype=int)
    pos = {int(b): i for i, b in enumerate(bus_ids)}

    order: list[tuple[int, int]] = []
    groups: dict[tuple[int, int], list[float]] = {}
    for br in case.branches:
        if not br.in_service:
            continue
        a, b = pos[br.from_bus], pos[br.to_bus]
        if a == b:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
        key = (min(a, b), max(a, b))
        if key not in groups:
            groups[key] = []
            order.append((a, b))
        groups[key].append(br.x)

    lines = np.array(order, dtype=int).reshape(-1, 2)
    reactance = np.empty(len(order))
    warnings = []
    for k, (a, b) in enumerate(order):
        xs = groups[(min(a, b), max(a, b))]
        if len(xs) == 1:
            reactance[k] = xs[0]
        else:
            reactance[k] = 1.0 / sum(1.0 / x for x in xs)
            warnings.append(
                f"merged {len(xs)} parallel branches {bus_ids[a]}-{bus_ids[b]} into x={reactance[k]:.6g}"
            )

    comps = connected_components(len(bus_ids), lines)
    if len(comps) > 1:
        raise ConnectivityError([[int(bus_ids[i]) for i in c] for c in comps])

    slack = [pos[b.id] for b in case.buses if b.type == "slack"]
    if slack:
        reference = slack[0]
    else:
        deg = np.bincount(lines.ravel(), minlength=len(bus_ids))
        reference = int(np.argmax(deg))  # argmax returns the first (lowest id) maximum
    injection = np.array([b.injection for b in case.buses], dtype=float)
    return GridTopology(bus_ids, lines, reactance, reference, injection, tuple(warnings))


def full_laplacian(topo: GridTopology, susceptance: np.ndarray | None = None) -> np.ndarray:
    """Weighted Laplacian assembled entry by entry from the line list.

    ``susceptance`` overrides the per-line weights ``1/x``; a zero weight
    removes the line.
    """
    w = 1.0 / topo.reactance if susceptance is None else np.asarray(susceptance, dtype=float)
    n = topo.n_buses
    H = np.zeros((n, n))
    a, b = topo.lines[:, 0], topo.lines[:, 1]
    np.add.at(H, (a, a), w)
    np.add.at(H, (b, b), w)
    np.add.at(H, (a, b), -w)
    np.add.at(H, (b, a), -w)
    return H


def reduce_matrix(H: np.ndarray, reference: int) -> np.ndarray:
    keep = np.delete(np.arange(H.shape[0]), reference)
    return H[np.ix_(keep, keep)]


def reduced_laplacian(topo: GridTopology, susceptance: np.ndarray | None = None) -> np.ndarray:
    return reduce_matrix(full_laplacian(topo, susceptance), topo.reference)


def invert_laplacian(H_reduced: np.ndarray) -> np.ndarray:
    """Inverse of a reduced Laplacian through its Cholesky factor."""
    try:
        factor = scipy.linalg.cho_factor(H_reduced, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularLaplacianError(f"reduced Laplacian is not positive definite: {exc}") from None
    B = scipy.linalg.cho_solve(factor, np.eye(H_reduced.shape[0]))
    return 0.5 * (B + B.T)


def gmrf_coefficients(topo: GridTopology, susceptance: np.ndarray | None = None):
    """Per-bus ``beta_i`` and coupling coefficients ``r_ij``.

    Returns
    -------
    beta : ndarray, shape (N,)
        ``1 / sum_j 1/x_ij``; ``inf`` for a bus left without lines.
    r : scipy.sparse.csr_matrix, shape (N, N)
        ``r[i, j] = beta_i / x_ij`` on edges. Rows sum to one.
    """
    w = 1.0 / topo.reactance if susceptance is None else np.asarray(susceptance, dtype=float)
    n = topo.n_buses
    a, b = topo.lines[:, 0], topo.lines[:, 1]
    total = np.bincount(a, weights=w, minlength=n) + np.bincount(b, weights=w, minlength=n)
    with np.errstate(divide="ignore"):
        beta = 1.0 / total
    live = w > 0
    a, b, w = a[live], b[live], w[live]
    # w / total rather than beta * w keeps a leaf's coefficient at exactly 1
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    vals = np.concatenate([w / total[a], w / total[b]])
    r = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return beta, r


def incidence_and_reactance(topo: GridTopology, susceptance: np.ndarray | None = None):
    """Incidence matrix ``M`` (N x L, +1 at from-bus, -1 at to-bus) and ``diag(1/x)``."""
    w = 1.0 / topo.reactance if susceptance is None else np.asarray(susceptance, dtype=float)
    n, L = topo.n_buses, topo.n_lines
    cols = np.arange(L)
    M = sp.csr_matrix(
        (np.r_[np.ones(L), -np.ones(L)], (np.r_[topo.lines[:, 0], topo.lines[:, 1]], np.r_[cols, cols])),
        shape=(n, L),
    )
    return M, sp.diags(w).tocsr()


@dataclass(frozen=True, eq=False)
class GmrfModel:
    """Pre-event grid model shared read-only by every trial."""

    topology: GridTopology
    susceptance: np.ndarray
    H_reduced: np.ndarray
    B_reduced: np.ndarray
    beta: np.ndarray
    r: sp.csr_matrix
    incidence: sp.csr_matrix
    theta_bar: np.ndarray

    @property
    def n_buses(self) -> int:
        return self.topology.n_buses

    @property
    def n_lines(self) -> int:
        return self.topology.n_lines

    @property
    def reference(self) -> int:
        return self.topology.reference

    @cached_property
    def keep(self) -> np.ndarray:
        """Bus positions of the reduced coordinates."""
        return np.delete(np.arange(self.n_buses), self.reference)

    @cached_property
    def reduced_index(self) -> np.ndarray:
        """Map bus position to reduced coordinate (-1 for the reference)."""
        idx = np.full(self.n_buses, -1)
        idx[self.keep] = np.arange(self.n_buses - 1)
        return idx

    @cached_property
    def incidence_reduced(self) -> sp.csr_matrix:
        return self.incidence[self.keep]

    @cached_property
    def X_diag(self) -> sp.csr_matrix:
        return sp.diags(self.susceptance).tocsr()

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_buses)
        full[self.keep] = reduced
        return full

    def coupling_row(self, i: int) -> dict[int, float]:
        row = self.r.getrow(i)
        return dict(zip(row.indices.tolist(), row.data.tolist()))


def build_model(topo: GridTopology) -> GmrfModel:
    H_red = reduced_laplacian(topo)
    B_red = invert_laplacian(H_red)
    beta, r = gmrf_coefficients(topo)
    M, _ = incidence_and_reactance(topo)
    keep = np.delete(np.arange(topo.n_buses), topo.reference)
    theta_bar = np.zeros(topo.n_buses)
    theta_bar[keep] = B_red @ topo.injection[keep]
    return GmrfModel(topo, 1.0 / topo.reactance, H_red, B_red, beta, r, M, theta_bar)


def model_from_case(case: RawCase) -> GmrfModel:
    return build_model(build_topology(case))


def angle_precision(model: GmrfModel, injection_cov: np.ndarray) -> np.ndarray:
    """Precision of the reduced angle vector when injections have covariance ``injection_cov``.

    Angles are ``B p``, so the precision is ``H Sigma^-1 H``. Its sparsity
    matches the graph only when ``Sigma`` is proportional to ``H``; white
    injection noise gives the two-hop pattern of ``H @ H``.
    """
    H = model.H_reduced
    return H @ np.linalg.solve(injection_cov, H)
