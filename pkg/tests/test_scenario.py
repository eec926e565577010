import numpy as np
import pytest

from gridloc.case_io import parse_matpower_case
from gridloc.grid_model import ConnectivityError, model_from_case
from gridloc.oracle import union_find_connected
from gridloc.scenario import (
    RANK_CORRECTION_TOL,
    ScenarioConfig,
    _rank_corrected_laplacian,
    enumerate_events,
    event_model,
    injection_sigma,
    is_connected,
    local_outage_events,
    nominal_state,
    sample_measurement_state,
    sparse_outage_vector,
)

from conftest import TWO_BUS_M, make_case


def test_triangle_single_outages(triangle):
    events = enumerate_events(triangle)
    assert len(events) == 4
    assert events.events[0] == ()
    assert events.anomalous == (1, 2, 3)


def test_path_has_no_single_outage():
    model = model_from_case(make_case(3, [(1, 2), (2, 3)]))
    assert len(enumerate_events(model)) == 1


def test_case14_contains_line_9_14(model14, events14):
    k = model14.topology.line_between(9, 14)
    assert events14.index_of([k]) > 0
    assert events14.label(events14.index_of([k])) == "9-14"


def test_explicit_events_sorted_and_checked(model14):
    a, b = model14.topology.line_between(9, 14), model14.topology.line_between(6, 13)
    events = enumerate_events(model14, [[b], [a, b], [a]], eta_max=2)
    lo, hi = sorted((a, b))
    assert events.events == ((), (lo,), (hi,), (lo, hi))
    with pytest.raises(ValueError, match="eta_max"):
        enumerate_events(model14, [[a, b]], eta_max=1)


def test_explicit_disconnecting_event_rejected(model14):
    leaf = model14.topology.line_between(7, 8)
    with pytest.raises(ConnectivityError):
        enumerate_events(model14, [[leaf]])


def test_two_bus_outage_rejected():
    model = model_from_case(parse_matpower_case(TWO_BUS_M))
    with pytest.raises(ConnectivityError):
        event_model(model, [0])


def test_triangle_outage_by_hand(triangle):
    # dropping 1-3 leaves the path 1-2-3 with reference 1
    ev = event_model(triangle, [triangle.topology.line_between(1, 3)])
    np.testing.assert_allclose(ev.H_reduced, [[2, -1], [-1, 1]])
    ev = event_model(triangle, [triangle.topology.line_between(2, 3)])
    np.testing.assert_allclose(ev.H_reduced, np.eye(2))


def test_dual_construction_case14(model14):
    k = model14.topology.line_between(9, 14)
    ev = event_model(model14, [k])
    gap = np.abs(_rank_corrected_laplacian(model14, ev.susceptance) - ev.H_reduced).max()
    assert gap <= RANK_CORRECTION_TOL


def test_reactance_change_event(model14):
    k = model14.topology.line_between(9, 14)
    ev = event_model(model14, [k], {k: 2 * model14.topology.reactance[k]})
    assert ev.susceptance[k] == pytest.approx(model14.susceptance[k] / 2)
    np.testing.assert_allclose(ev.H_reduced @ ev.B_reduced, np.eye(13), atol=1e-9)
    with pytest.raises(ValueError):
        event_model(model14, [k], {k: -1.0})


def test_connectivity_checks(triangle):
    lines = triangle.topology.lines
    assert is_connected(3, lines, np.array([True, True, False]))
    path = make_case(3, [(1, 2), (2, 3)])
    assert not is_connected(3, model_from_case(path).topology.lines, np.array([True, False]))


def test_connectivity_matches_union_find(model118):
    topo = model118.topology
    mask = np.ones(topo.n_lines, dtype=bool)
    for k in range(topo.n_lines):
        mask[k] = False
        assert is_connected(topo.n_buses, topo.lines, mask) == union_find_connected(topo.n_buses, topo.lines, mask)
        mask[k] = True


def test_nominal_state_examples(model14):
    zero = model_from_case(make_case(3, [(1, 2), (2, 3), (1, 3)]))
    assert np.all(nominal_state(zero) == 0)
    two = model_from_case(parse_matpower_case(TWO_BUS_M))
    assert nominal_state(two)[1] == pytest.approx(-0.5)
    theta = nominal_state(model14)
    keep = model14.keep
    np.testing.assert_allclose(model14.H_reduced @ theta[keep], model14.topology.injection[keep], atol=1e-9)


def test_every_event_model_reproduces_injections(model14, events14):
    keep = model14.keep
    for k in range(len(events14)):
        ev = events14[k]
        np.testing.assert_allclose(ev.H_reduced @ ev.theta_bar[keep], model14.topology.injection[keep], atol=1e-8)


def test_noise_free_sample_is_exact(model14, events14, rng):
    assert np.array_equal(sample_measurement_state(events14[0], 0.0, rng), model14.theta_bar)
    k = events14.index_of([model14.topology.line_between(9, 14)])
    assert np.array_equal(sample_measurement_state(events14[k], 0.0, rng), events14[k].theta_bar)


def test_bus4_deviation_ordering(model14, events14):
    # the 14-bus walkthrough compares these two entries; see the acceptance suite
    k = events14.index_of([model14.topology.line_between(9, 14)])
    delta = events14[k].theta_bar - model14.theta_bar
    pos4, pos6 = model14.topology.position(4), model14.topology.position(6)
    print(f"|dtheta_4|={abs(delta[pos4]):.5f} |dtheta_6|={abs(delta[pos6]):.5f}")
    # independent of injections: proportional to B (e9 - e14)
    e = np.zeros(14)
    e[model14.topology.position(9)], e[model14.topology.position(14)] = 1.0, -1.0
    direction = model14.expand(events14[k].B_reduced @ e[model14.keep])
    ratio = delta[np.abs(direction) > 1e-12] / direction[np.abs(direction) > 1e-12]
    assert np.ptp(ratio) <= 1e-9 * np.abs(ratio).max()


def test_injection_moments(model14):
    sigma = injection_sigma(model14, 0.01)
    assert sigma == pytest.approx(0.01 * np.mean(np.abs(model14.topology.injection)))
    rng = np.random.default_rng(7)
    keep = model14.keep
    draws = np.array([model14.H_reduced @ sample_measurement_state(
        enumerate_events(model14)[0], 0.01, rng)[keep] for _ in range(10_000)])
    cov = np.cov(draws.T)
    np.testing.assert_allclose(draws.mean(axis=0), model14.topology.injection[keep], atol=5 * sigma / 100)
    assert np.abs(cov - sigma**2 * np.eye(13)).max() <= 0.1 * sigma**2


@pytest.mark.parametrize("noise", [0.0, 0.01, 0.05])
def test_sparse_model_identity(model14, events14, noise):
    """dtheta = B M s + B n with s built from the realized angles."""
    rng = np.random.default_rng(3)
    keep = model14.keep
    sigma = injection_sigma(model14, noise)
    for k in events14.anomalous:
        ev = events14[k]
        n = sigma * rng.standard_normal(13)
        theta = model14.expand(ev.B_reduced @ (model14.topology.injection[keep] + n))
        s = sparse_outage_vector(model14, ev, theta)
        lhs = (theta - model14.theta_bar)[keep]
        rhs = model14.B_reduced @ (model14.incidence_reduced @ s) + model14.B_reduced @ n
        assert np.abs(lhs - rhs).max() <= 1e-8
        assert set(np.flatnonzero(s)) == set(ev.lines)


def test_sampling_is_deterministic(model14, events14):
    a = sample_measurement_state(events14[3], 0.01, np.random.default_rng(9))
    b = sample_measurement_state(events14[3], 0.01, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(true_event=1, noise_fraction=-0.1)


def test_local_outage_events_are_clustered(model14):
    groups = local_outage_events(model14, 2)
    assert groups
    lines = model14.topology.lines
    for a, b in groups:
        assert set(lines[a]) & set(lines[b])
        mask = np.ones(model14.n_lines, dtype=bool)
        mask[[a, b]] = False
        assert is_connected(14, lines, mask)
