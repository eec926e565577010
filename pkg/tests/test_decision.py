import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridloc.decision import (
    DegenerateObservationError,
    WhitenedSystem,
    calibrate_threshold,
    map_support_to_event,
    omp_localize,
    omp_per_hypothesis,
    stop_or_continue,
    whiten,
)
from gridloc.engine import RunConfig, observation_system, run_trial, trace_trial, whitening_sigma
from gridloc.oracle import exhaustive_support_oracle
from gridloc.scenario import injection_sigma, sparse_outage_vector


def _system(A, y):
    return WhitenedSystem(np.asarray(y, float), np.asarray(A, float), np.ones(len(y)))


def test_whiten_identity():
    d = np.array([0.3, -0.2, 0.1])
    M = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])
    sys = whiten(np.eye(3), 1.0, d, M)
    # U = V up to signs, which cancel in A s versus y
    s = np.array([0.7, -0.4])
    assert np.linalg.norm(sys.y) == pytest.approx(np.linalg.norm(d))
    lhs = whiten(np.eye(3), 1.0, M @ s, M)
    np.testing.assert_allclose(lhs.y, lhs.A @ s, atol=1e-12)
    assert sys.rank == 3


def test_whiten_scalar():
    sys = whiten(np.array([[2.0]]), 1.0, np.array([0.8]), np.array([[1.0]]))
    assert sys.singular_values[0] == pytest.approx(2.0)
    assert abs(sys.y[0]) == pytest.approx(0.4)


def test_whiten_matrix_sigma_matches_scalar(model14):
    rows = model14.B_reduced[[1, 4, 7]]
    d = np.array([0.01, -0.02, 0.005])
    a = whiten(rows, 0.3, d, model14.incidence_reduced)
    b = whiten(rows, 0.3 * np.eye(13), d, model14.incidence_reduced)
    np.testing.assert_allclose(np.abs(a.y), np.abs(b.y), atol=1e-10)
    np.testing.assert_allclose(np.abs(a.A), np.abs(b.A), atol=1e-10)


def test_whiten_drops_small_singular_values():
    rows = np.array([[1.0, 0.0], [1.0, 1e-14]])
    sys = whiten(rows, 1.0, np.array([1.0, 1.0]), np.eye(2))
    assert sys.rank == 1


def test_whiten_degenerate():
    with pytest.raises(DegenerateObservationError):
        whiten(np.zeros((2, 3)), 1.0, np.zeros(2), np.eye(3))
    with pytest.raises(DegenerateObservationError):
        whiten(np.zeros((0, 3)), 1.0, np.zeros(0), np.eye(3))


def test_whitened_noise_is_white(model14):
    rng = np.random.default_rng(11)
    observed = [1, 2, 4, 6, 8, 10, 11, 13]
    rows = [model14.reduced_index[b] for b in observed]
    sigma = injection_sigma(model14, 0.01)
    draws = []
    for _ in range(10_000):
        n = sigma * rng.standard_normal(13)
        d = model14.B_reduced[rows] @ n
        draws.append(whiten(model14.B_reduced[rows], sigma, d, model14.incidence_reduced).y)
    cov = np.cov(np.array(draws).T)
    assert cov.shape == (8, 8)
    assert np.abs(cov - np.eye(8)).max() <= 0.1


@pytest.mark.parametrize("noise", [0.0, 0.01])
def test_true_support_leaves_exactly_the_noise(model14, events14, noise):
    rng = np.random.default_rng(5)
    keep = model14.keep
    sigma = injection_sigma(model14, noise)
    s_sigma = whitening_sigma(model14, noise)
    observed = [0, 2, 3, 5, 8, 9, 12]
    for k in events14.anomalous[:8]:
        ev = events14[k]
        n = sigma * rng.standard_normal(13)
        theta = model14.expand(ev.B_reduced @ (model14.topology.injection[keep] + n))
        s = sparse_outage_vector(model14, ev, theta)
        sys = observation_system(model14, observed, theta, s_sigma)
        rows = [model14.reduced_index[b] for b in observed if b != model14.reference]
        noise_part = whiten(model14.B_reduced[rows], s_sigma, model14.B_reduced[rows] @ n, model14.incidence_reduced).y
        gap = np.linalg.norm(sys.y - sys.A @ s) - np.linalg.norm(noise_part)
        assert abs(gap) <= 1e-8
        if noise == 0.0:
            assert np.linalg.norm(sys.y - sys.A @ s) <= 1e-8


def test_omp_identity_dictionary():
    res = omp_localize(_system(np.eye(3), [0.0, 3.0, 0.0]), 1e-6, 1)
    assert res.support == (1,)
    np.testing.assert_allclose(res.s_hat, [0.0, 3.0, 0.0])
    assert res.residual_norm == 0.0


def test_omp_zero_data():
    res = omp_localize(_system(np.eye(3), np.zeros(3)), 1e-6, 1)
    assert res.support == () and res.residual_norm == 0.0
    assert map_support_to_event(res.support, [(), (0,), (1,)]) == (0, 0)


def test_omp_ties_go_to_lowest_index():
    res = omp_localize(_system(np.eye(3), [1.0, 1.0, 0.0]), 1e-6, 1)
    assert res.support == (0,)
    assert not res.unique(1)


def test_omp_skips_zero_columns():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    res = omp_localize(_system(A, [2.0, 0.0]), 1e-6, 2)
    assert res.support == (1,)


def test_omp_rank_deficient_flag():
    A = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    res = omp_localize(_system(A, [1.0, 1.0]), 0.0, 3)
    assert len(res.support) <= 3
    assert res.residual_norm <= 1e-12


def test_case14_line_9_14_full_observation(model14, events14):
    k = events14.index_of([model14.topology.line_between(9, 14)])
    theta = events14[k].theta_bar
    sys = observation_system(model14, range(14), theta, whitening_sigma(model14, 0.0))
    res = omp_localize(sys, 1e-6, 1)
    assert res.support == events14.events[k]
    assert res.residual_norm <= 1e-8
    oracle, residual = exhaustive_support_oracle(sys, 1)
    assert oracle == res.support and residual <= 1e-8


def test_case14_every_outage_recovered(model14, events14):
    sigma = whitening_sigma(model14, 0.0)
    for k in events14.anomalous:
        sys = observation_system(model14, range(14), events14[k].theta_bar, sigma)
        res = omp_localize(sys, 1e-6, 1)
        assert res.support == events14.events[k]
        assert res.unique(1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_residuals_shrink_and_stay_orthogonal(seed, eta_max):
    rng = np.random.default_rng(seed)
    m, L = int(rng.integers(2, 10)), int(rng.integers(2, 15))
    sys = _system(rng.normal(size=(m, L)), rng.normal(size=m))
    res = omp_localize(sys, 0.0, eta_max)
    hist = np.array(res.residual_history)
    assert (np.diff(hist) <= 1e-12 * max(1.0, hist[0])).all()
    r = sys.y - sys.A @ res.s_hat
    assert np.linalg.norm(r) == pytest.approx(res.residual_norm, abs=1e-10)
    if res.support and not res.rank_deficient:
        assert np.linalg.norm(sys.A[:, list(res.support)].T @ r) <= 1e-8 * max(1.0, np.linalg.norm(sys.y))
    assert len(res.support) <= eta_max


def test_per_event_pursuit_matches_shared_system(model14, events14):
    k = events14.index_of([model14.topology.line_between(9, 14)])
    sys = observation_system(model14, [3, 5, 8, 13, 12], events14[k].theta_bar, 1.0)
    single = omp_localize(sys, 1e-6, 1)
    _, multi = omp_per_hypothesis([sys] * 4, 1e-6, 1)
    assert multi.support == single.support
    assert multi.residual_norm == pytest.approx(single.residual_norm)


@pytest.mark.parametrize(
    "residual, gamma, remaining, expected",
    [(0.5, 1.0, 3, (True, False)), (2.0, 1.0, 3, (False, False)), (2.0, 1.0, 0, (True, True))],
)
def test_stop_or_continue(residual, gamma, remaining, expected):
    assert tuple(stop_or_continue(residual, gamma, remaining)) == expected


def test_uninformative_fit_does_not_stop():
    assert tuple(stop_or_continue(0.0, 1.0, 3, informative=False)) == (False, False)
    assert tuple(stop_or_continue(0.0, 1.0, 0, informative=False)) == (True, True)


def test_map_support_examples():
    events = [(), (1,), (3,)]
    assert map_support_to_event((), events) == (0, 0)
    assert map_support_to_event((3,), events) == (2, 0)
    assert map_support_to_event((1, 2), events) == (1, 1)
    # equidistant hypotheses: lowest index
    assert map_support_to_event((5,), [(), (1,), (3,)]) == (0, 1)


def test_calibration_is_deterministic(model14, events14):
    a = calibrate_threshold(model14, events14, 0.01, 0.05, 100, seed=3, ell=2)
    b = calibrate_threshold(model14, events14, 0.01, 0.05, 100, seed=3, ell=2)
    assert a.gamma == b.gamma and a.error == b.error
    np.testing.assert_array_equal(a.errors, b.errors)


def test_calibration_vacuous_target(model14, events14):
    res = calibrate_threshold(model14, events14, 0.01, 1.0, 100, seed=0, ell=2)
    assert res.gamma == res.candidates.max() and res.attained


def test_calibration_noise_free(model14, events14):
    res = calibrate_threshold(model14, events14, 0.0, 0.0, 100, seed=0, ell=2)
    assert res.attained and res.error == 0.0
    # and the returned threshold keeps zero error on fresh trials
    cfg = RunConfig(ell=2, gamma=res.gamma, noise_fraction=0.0)
    assert all(run_trial(model14, events14, cfg, np.random.default_rng(900 + i)).correct for i in range(60))


def test_calibration_error_curve_is_monotone(model14, events14):
    res = calibrate_threshold(model14, events14, 0.02, 0.05, 100, seed=1, ell=2)
    assert (np.diff(res.errors) >= 0).all()
    assert res.errors[res.candidates <= res.gamma].max() <= 0.05


def test_calibration_unattainable_warns(model14, events14):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = calibrate_threshold(model14, events14, 2.0, 0.0, 100, seed=0, ell=2)
    assert not res.attained
    assert res.error == res.errors.min()
    assert any("not reached" in str(w.message) for w in caught)


def test_calibration_needs_enough_trials(model14, events14):
    with pytest.raises(ValueError):
        calibrate_threshold(model14, events14, 0.01, 0.05, 99, seed=0)


@pytest.mark.parametrize("noise, ell", [(0.01, 1), (0.01, 2), (0.0, 2), (0.05, 3)])
def test_replay_reproduces_sequential_run(model14, events14, noise, ell):
    base = RunConfig(ell=ell, gamma=0.0, noise_fraction=noise)
    for seed in range(15):
        trace = trace_trial(model14, events14, base, np.random.default_rng(seed), seed)
        for gamma in list(trace.breakpoints()) + [np.inf]:
            live = run_trial(model14, events14, RunConfig(ell=ell, gamma=gamma, noise_fraction=noise),
                             np.random.default_rng(seed), seed)
            again = trace.replay(gamma)
            assert (again.decided_event, again.measurements_used, again.forced_stop) == (
                live.decided_event, live.measurements_used, live.forced_stop)
