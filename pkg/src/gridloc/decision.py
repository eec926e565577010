"""Sparse-recovery decision rule.

Observed angle deviations obey ``dtheta = B_obs M s + B_obs n`` where ``s``
is non-zero only on anomalous lines. After whitening the noise, orthogonal
matching pursuit recovers the support of ``s``; sampling stops once the
fit residual drops below a threshold ``gamma``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

SV_CUTOFF = 1e-10
TIE_TOL = 1e-6


class DegenerateObservationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WhitenedSystem:
    """``y = A s + noise`` with identity noise covariance.

    ``y`` has one entry per retained singular direction; ``A`` has one
    column per line.
    """

    y: np.ndarray
    A: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.y)


def whiten(B_rows, sigma_sqrt, delta_theta, incidence, cutoff: float = SV_CUTOFF) -> WhitenedSystem:
    """Whiten the observation model of a set of observed buses.

    Parameters
    ----------
    B_rows : ndarray, shape (m, N-1)
        Rows of the reduced inverse Laplacian for the observed
        non-reference buses.
    sigma_sqrt : float or ndarray, shape (N-1, N-1)
        Square root of the injection-noise covariance; a scalar stands for
        ``sigma * I``.
    delta_theta : ndarray, shape (m,)
        Observed deviations from the nominal angles.
    incidence : ndarray or sparse matrix, shape (N-1, L)
        Incidence matrix with the reference row removed.

    Singular values below ``cutoff`` times the largest are discarded.
    """
    B_rows = np.atleast_2d(np.asarray(B_rows, dtype=float))
    if B_rows.shape[0] == 0:
        raise DegenerateObservationError("no non-reference bus observed")
    if np.isscalar(sigma_sqrt):
        K = B_rows * sigma_sqrt
        M_scaled = incidence / sigma_sqrt
    else:
        K = B_rows @ sigma_sqrt
        M_dense = incidence.toarray() if sp.issparse(incidence) else np.asarray(incidence)
        M_scaled = scipy.linalg.solve(sigma_sqrt, M_dense, assume_a="sym")
    U, lam, Vt = np.linalg.svd(K, full_matrices=False)
    if lam.size == 0 or lam[0] <= 0:
        raise DegenerateObservationError("observation matrix is zero")
    keep = lam > cutoff * lam[0]
    U, lam, Vt = U[:, keep], lam[keep], Vt[keep]
    y = (U.T @ np.asarray(delta_theta, dtype=float)) / lam
    if sp.issparse(M_scaled):
        A = np.asarray((M_scaled.T @ Vt.T).T)
    else:
        A = Vt @ M_scaled
    return WhitenedSystem(y, A, lam)


@dataclass(frozen=True, eq=False)
class OmpResult:
    support: tuple[int, ...]
    s_hat: np.ndarray
    residual_norm: float
    residual_history: tuple[float, ...]
    rank_deficient: bool = False
    rival_history: tuple[float, ...] = ()

    def rival(self, h: int) -> float:
        """Best residual after swapping the ``h``-th selected atom for any other."""
        return self.rival_history[h] if h < len(self.rival_history) else np.inf

    def unique(self, h: int) -> bool:
        """Whether no other support of the same kind fits as well as the first ``h`` atoms.

        For ``h >= 1`` the rivals swap the ``h``-th atom for another; for
        ``h = 0`` they are the single atoms, so data that every line
        explains equally (all zeros) does not count as evidence of no
        event. Ties are judged relative to ``|y|``, never below one
        whitened noise unit.
        """
        scale = max(self.residual_history[0], 1.0)
        return abs(self.rival(h) - self.residual_history[h]) > TIE_TOL * scale


def _refit(A_T: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    G = A_T.T @ A_T
    if np.linalg.matrix_rank(A_T) == A_T.shape[1]:
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), A_T.T @ y), False
        except np.linalg.LinAlgError:
            pass
    coef, *_ = np.linalg.lstsq(A_T, y, rcond=None)
    return coef, True


def _rival_residual(A: np.ndarray, prev: list[int], residual: np.ndarray, exclude: list[int]) -> float:
    # residual of prev + {c}, minimized over c, via projection onto span(prev)'s complement
    if prev:
        Q, _ = np.linalg.qr(A[:, prev])
        A_perp = A - Q @ (Q.T @ A)
    else:
        A_perp = A
    norms2 = np.einsum("ij,ij->j", A_perp, A_perp)
    gain = np.zeros(A.shape[1])
    ok = norms2 > 1e-24 * max(norms2.max(initial=0.0), 1.0)
    gain[ok] = (A_perp[:, ok].T @ residual) ** 2 / norms2[ok]
    gain[exclude] = -np.inf
    best = float(np.max(gain, initial=-np.inf))
    if not np.isfinite(best):
        return np.inf
    return float(np.sqrt(max(residual @ residual - best, 0.0)))


def omp_localize(system: WhitenedSystem, gamma: float, eta_max: int) -> OmpResult:
    """Orthogonal matching pursuit with a residual threshold and a sparsity cap.

    Each iteration adds the column with the largest normalized correlation
    to the residual (lowest line index on ties), then refits all selected
    coefficients by least squares. Iteration stops once the residual norm
    is at most ``gamma`` or ``eta_max`` columns are selected.

    For every iteration the result also keeps the smallest residual that
    any other choice of the newest atom would have reached, which tells
    whether the fit singles out one support.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if eta_max < 1:
        raise ValueError("eta_max must be >= 1")
    y, A = system.y, system.A
    L = A.shape[1]
    norms = np.linalg.norm(A, axis=0)
    usable = norms > 1e-12 * (norms.max() if L else 0.0)
    support: list[int] = []
    s_hat = np.zeros(L)
    residual = y.copy()
    history = [float(np.linalg.norm(residual))]
    rivals = [_rival_residual(A, [], y, [])]
    deficient = False
    while history[-1] > gamma and len(support) < eta_max:
        score = np.full(L, -np.inf)
        score[usable] = np.abs(A[:, usable].T @ residual) / norms[usable]
        score[support] = -np.inf
        k = int(np.argmax(score))
        if not np.isfinite(score[k]) or score[k] == 0.0:
            break
        rivals.append(_rival_residual(A, support, residual, support + [k]))
        support.append(k)
        A_T = A[:, support]
        coef, flag = _refit(A_T, y)
        deficient |= flag
        s_hat = np.zeros(L)
        s_hat[support] = coef
        residual = y - A_T @ coef
        history.append(float(np.linalg.norm(residual)))
    return OmpResult(tuple(support), s_hat, history[-1], tuple(history), deficient, tuple(rivals))


def omp_per_hypothesis(systems: Sequence[WhitenedSystem], gamma: float, eta_max: int) -> tuple[int, OmpResult]:
    """Run pursuit on one whitened system per hypothesis, in lock step.

    All pursuits advance together while the smallest residual exceeds
    ``gamma``; the hypothesis with the smallest final residual wins.
    """
    states = []
    for sys_k in systems:
        states.append(
            {"sys": sys_k, "support": [], "r": sys_k.y.copy(), "s": np.zeros(sys_k.A.shape[1]), "hist": [float(np.linalg.norm(sys_k.y))], "bad": False}
        )

    def best_residual():
        return min(st["hist"][-1] for st in states)

    while best_residual() > gamma and all(len(st["support"]) < eta_max for st in states):
        progressed = False
        for st in states:
            A = st["sys"].A
            norms = np.linalg.norm(A, axis=0)
            score = np.where(norms > 0, np.abs(A.T @ st["r"]) / np.where(norms > 0, norms, 1.0), -np.inf)
            score[st["support"]] = -np.inf
            k = int(np.argmax(score))
            if not np.isfinite(score[k]) or score[k] == 0.0:
                continue
            st["support"].append(k)
            coef, flag = _refit(A[:, st["support"]], st["sys"].y)
            st["bad"] |= flag
            st["s"] = np.zeros(A.shape[1])
            st["s"][st["support"]] = coef
            st["r"] = st["sys"].y - A[:, st["support"]] @ coef
            st["hist"].append(float(np.linalg.norm(st["r"])))
            progressed = True
        if not progressed:
            break
    k = int(np.argmin([st["hist"][-1] for st in states]))
    st = states[k]
    return k, OmpResult(tuple(st["support"]), st["s"], st["hist"][-1], tuple(st["hist"]), st["bad"])


class Verdict(NamedTuple):
    stop: bool
    forced: bool


def stop_or_continue(residual_norm: float, gamma: float, unobserved_remaining: int, informative: bool = True) -> Verdict:
    """Stop when the fit is good enough, or when nothing is left to observe.

    ``informative`` is false while a small residual says nothing: when
    the whitened system has no more rows than selected columns, or when
    some other support fits just as well.
    """
    if informative and residual_norm <= gamma:
        return Verdict(True, False)
    if unobserved_remaining <= 0:
        return Verdict(True, True)
    return Verdict(False, False)


def map_support_to_event(support, events) -> tuple[int, int]:
    """Index of the hypothesis closest to a recovered support.

    ``events`` is a sequence of line tuples (or an ``EventSet``). Distance
    is the size of the symmetric difference; ties go to the lower index.
    Returns ``(index, distance)``.
    """
    target = set(int(k) for k in support)
    lines = getattr(events, "events", events)
    best, best_d = 0, None
    for k, event in enumerate(lines):
        d = len(target.symmetric_difference(event))
        if best_d is None or d < best_d:
            best, best_d = k, d
            if d == 0:
                break
    return best, int(best_d if best_d is not None else len(target))


@dataclass
class LocalizationDecision:
    decided_event: int
    support: tuple[int, ...]
    s_hat: np.ndarray
    residual_norm: float
    stopped: bool
    forced: bool
    measurements_used: int
    steps: int
    mismatch: int = 0


@dataclass
class CalibrationResult:
    gamma: float
    error: float
    attained: bool
    candidates: np.ndarray = field(repr=False)
    errors: np.ndarray = field(repr=False)
    mean_measurements: np.ndarray = field(repr=False)


def calibrate_threshold(
    model,
    events,
    noise_fraction: float,
    beta: float,
    n_calib: int,
    seed: int,
    ell: int = 1,
    eta_max: int | None = None,
    mode: str = "adaptive",
) -> CalibrationResult:
    """Pick the stopping threshold from simulated trials.

    Each calibration trial is sampled to exhaustion once, keeping the full
    pursuit history at every step. For any threshold the stopping step and
    decision then follow by replay, so every candidate is scored on the
    same trials. The largest threshold (earliest stopping) whose empirical
    error is at most ``beta`` is returned. If none qualifies, the
    error-minimizing one is returned with ``attained=False``.

    ``mode`` and ``ell`` should match the runs the threshold is meant for;
    ``mode="full"`` scores a single decision from every bus.
    """
    from .engine import RunConfig, trace_trial

    if n_calib < 100:
        raise ValueError("n_calib must be at least 100")
    cfg = RunConfig(
        ell=ell, gamma=0.0, eta_max=eta_max or events.eta_max or 1, noise_fraction=noise_fraction, mode=mode
    )
    traces = [trace_trial(model, events, cfg, np.random.default_rng(seed + k)) for k in range(n_calib)]

    # a trial's outcome only changes where gamma crosses one of its residuals
    per_trial = []
    values = {0.0, np.inf}
    for tr in traces:
        bps = tr.breakpoints()
        values.update(bps.tolist())
        outcomes = [tr.replay(g) for g in bps]
        per_trial.append(
            (bps, np.array([not o.correct for o in outcomes]), np.array([o.measurements_used for o in outcomes]))
        )
    candidates = np.array(sorted(values))
    errors = np.zeros(len(candidates))
    used = np.zeros(len(candidates))
    for bps, wrong, meas in per_trial:
        pos = np.searchsorted(bps, candidates, side="right") - 1
        errors += wrong[pos]
        used += meas[pos]
    errors /= len(traces)
    used /= len(traces)

    ok = np.flatnonzero(errors <= beta)
    if ok.size:
        c = int(ok[-1])
        return CalibrationResult(float(candidates[c]), float(errors[c]), True, candidates, errors, used)
    c = int(np.flatnonzero(errors == errors.min())[-1])
    warnings.warn(f"error target {beta} not reached on calibration set; best error {errors[c]:.3f}", stacklevel=2)
    return CalibrationResult(float(candidates[c]), float(errors[c]), False, candidates, errors, used)
