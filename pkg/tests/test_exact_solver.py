"""Direct WLS solves: closed forms, BP equivalence on trees, covariance."""

import math

import numpy as np
import pytest

from gridbp import (
    Bus,
    GridCase,
    Line,
    MeasurementSet,
    build_factor_graph,
    derive_dc_state,
    exact_covariance,
    run_bp,
    total_squared_error,
    wls_angles,
    wls_flows,
)
from gridbp.scenarios import make_mask, sample_measurements

INF = float("inf")


def _full_meas(case, variance=1e-4, seed=0):
    mask = make_mask(case, 0.0, "Uniform", seed)
    return sample_measurements(case, mask, variance, seed)


def test_hub_closed_form():
    case = GridCase(
        "hub",
        100.0,
        (Bus(1, 0.0), Bus(2, 0.0), Bus(3, 0.0)),
        (Line(1, 1, 2, 1.0), Line(2, 1, 3, 1.0)),
    )
    z1, z2, zg, v1, v2, vg = 3.0, -1.5, 2.0, 0.10, 0.25, 0.05
    meas = MeasurementSet(
        flow={1: (z1, v1), 2: (z2, v2)},
        injection={1: (zg, vg), 2: (0.0, INF), 3: (0.0, INF)},
    )
    sol = wls_flows(build_factor_graph(case, meas))
    p11, p22, p12 = 1 / v1 + 1 / vg, 1 / v2 + 1 / vg, 1 / vg
    det = p11 * p22 - p12 * p12
    h1, h2 = z1 / v1 + zg / vg, z2 / v2 + zg / vg
    assert sol.mean_of(1) == pytest.approx((p22 * h1 - p12 * h2) / det, rel=1e-12)
    assert sol.mean_of(2) == pytest.approx((p11 * h2 - p12 * h1) / det, rel=1e-12)
    assert sol.covariance[0, 0] == pytest.approx(p22 / det, rel=1e-12)
    assert sol.covariance[1, 1] == pytest.approx(p11 / det, rel=1e-12)
    assert sol.covariance[0, 1] == pytest.approx(-p12 / det, rel=1e-12)


def test_bp_equals_wls_on_a_tree():
    # A hand-shaped 6-bus tree with mixed orientations.
    buses = tuple(Bus(i, 0.05 * math.sin(i)) for i in range(1, 7))
    lines = (
        Line(1, 1, 2, 2.0),
        Line(2, 3, 2, 1.5),
        Line(3, 2, 4, 3.0),
        Line(4, 5, 4, 2.5),
        Line(5, 4, 6, 1.0),
    )
    case = derive_dc_state(GridCase("tree6", 100.0, buses, lines))
    graph = build_factor_graph(case, _full_meas(case, seed=4))
    sol = wls_flows(graph)
    bp = run_bp(graph)
    assert bp.converged
    for i, lid in enumerate(sol.line_ids):
        assert bp.beliefs[lid].mean == pytest.approx(sol.means[i], abs=1e-10)
        assert bp.beliefs[lid].variance == pytest.approx(sol.covariance[i, i], rel=1e-10)


def test_flow_and_angle_parameterizations_agree_on_trees():
    # Without loops the flow vector is unconstrained, so estimating flows
    # directly or via bus angles minimizes the same objective.
    buses = tuple(Bus(i, 0.01 * i * i) for i in range(1, 8))
    lines = tuple(Line(k, k, k + 1, 1.0 + 0.2 * k) for k in range(1, 7))
    case = derive_dc_state(GridCase("tree7", 100.0, buses, lines))
    meas = _full_meas(case, seed=9)
    direct = wls_flows(build_factor_graph(case, meas))
    via_angles = wls_angles(case, meas)
    np.testing.assert_allclose(via_angles.means, direct.means, rtol=1e-9, atol=1e-9)


def test_angle_estimator_beats_flow_estimator_on_loops(ieee118):
    """Cycle consistency is extra information: on loopy grids the angle-based
    estimate lands closer to the truth, by a margin that scales with noise."""
    truth = np.array([ln.flow_true for ln in ieee118.lines])
    gaps = []
    for seed in (0, 1, 2):
        meas = _full_meas(ieee118, variance=1e-4, seed=seed)
        flows = wls_flows(build_factor_graph(ieee118, meas), compute_covariance=False)
        angles = wls_angles(ieee118, meas, compute_covariance=False)
        tse_flow = total_squared_error(flows.means, truth)
        tse_angle = total_squared_error(angles.means, truth)
        gaps.append(tse_flow - tse_angle)
    assert all(g > 0 for g in gaps)


def test_noiseless_measurements_recover_truth(ieee57):
    meas = MeasurementSet(
        flow={ln.id: (ln.flow_true, 1e-4) for ln in ieee57.lines},
        injection={b.id: (b.injection_true, 1e-4) for b in ieee57.buses},
    )
    graph = build_factor_graph(ieee57, meas)
    sol = wls_flows(graph, compute_covariance=False)
    bp = run_bp(graph)
    for i, ln in enumerate(ieee57.lines):
        assert sol.means[i] == pytest.approx(ln.flow_true, abs=1e-8)
        assert bp.beliefs[ln.id].mean == pytest.approx(ln.flow_true, abs=1e-8)
    assert sol.residual == pytest.approx(0.0, abs=1e-12)


def test_residual_is_minimal(ieee30):
    meas = _full_meas(ieee30, seed=3)
    graph = build_factor_graph(ieee30, meas)
    sol = wls_flows(graph, compute_covariance=False)
    # Objective evaluated at the DC truth can only be larger.
    at_truth = 0.0
    flows = {ln.id: ln.flow_true for ln in ieee30.lines}
    for ln in ieee30.lines:
        z, v = meas.flow[ln.id]
        at_truth += (flows[ln.id] - z) ** 2 / (2 * v)
    for b in ieee30.buses:
        z, v = meas.injection[b.id]
        inj = sum(
            flows[ln.id] if ln.from_bus == b.id else -flows[ln.id]
            for ln in ieee30.incident_lines(b.id)
        )
        at_truth += (inj - z) ** 2 / (2 * v)
    assert sol.residual <= at_truth + 1e-12


def test_rank_deficient_marks_unretrievable(ieee14):
    mask = make_mask(ieee14, 0.6, "Uniform", 5)
    meas = sample_measurements(ieee14, mask, 1e-4, 5)
    graph = build_factor_graph(ieee14, meas)
    sol = wls_flows(graph)
    bp = run_bp(graph)
    n_ret = int(sol.retrievable_mask.sum())
    assert 0 < n_ret < len(ieee14.lines)
    assert sol.covariance.shape == (n_ret, n_ret)
    for i, lid in enumerate(sol.line_ids):
        if sol.retrievable_mask[i]:
            assert math.isfinite(sol.means[i])
            assert bp.beliefs[lid].variance < INF
        else:
            assert math.isnan(sol.means[i])
            assert bp.beliefs[lid].variance == INF


def test_empty_measurements(ieee14):
    meas = MeasurementSet(
        flow={ln.id: (0.0, INF) for ln in ieee14.lines},
        injection={b.id: (0.0, INF) for b in ieee14.buses},
    )
    sol = wls_flows(build_factor_graph(ieee14, meas))
    assert not sol.retrievable_mask.any()
    assert np.isnan(sol.means).all()
    assert sol.residual == 0.0


def test_exact_covariance_subset_and_errors(ieee14, graph_for):
    graph, _ = graph_for(ieee14)
    subset = [3, 1, 7]
    cov = exact_covariance(graph, subset)
    assert cov.shape == (3, 3)
    np.testing.assert_allclose(cov, cov.T, atol=1e-15)
    assert np.all(np.diag(cov) > 0)
    full = wls_flows(graph).covariance
    order = {lid: i for i, lid in enumerate(ln.id for ln in ieee14.lines)}
    idx = [order[lid] for lid in subset]
    np.testing.assert_allclose(cov, full[np.ix_(idx, idx)], atol=1e-15)

    with pytest.raises(KeyError, match="not in graph"):
        exact_covariance(graph, [999])


def test_exact_covariance_rejects_unretrievable(ieee14):
    meas = MeasurementSet(
        flow={ln.id: (0.0, INF) for ln in ieee14.lines},
        injection={b.id: (b.injection_true, 1e-4) for b in ieee14.buses},
    )
    graph = build_factor_graph(ieee14, meas)
    sol = wls_flows(graph)
    dead = [lid for i, lid in enumerate(sol.line_ids) if not sol.retrievable_mask[i]]
    if not dead:
        pytest.skip("all lines retrievable from injections alone on this grid")
    with pytest.raises(ValueError, match="not retrievable"):
        exact_covariance(graph, dead[:1])


def test_exact_covariance_ignores_measured_values(ieee30, graph_for):
    lines = [ln.id for ln in ieee30.lines]
    g1, _ = graph_for(ieee30, seed=1)
    g2, _ = graph_for(ieee30, seed=2)
    c1 = exact_covariance(g1, lines)
    c2 = exact_covariance(g2, lines)
    assert np.array_equal(c1, c2)


def test_total_squared_error_skips_non_finite():
    est = np.array([1.0, float("nan"), 3.0])
    tru = np.array([0.0, 5.0, 1.0])
    assert total_squared_error(est, tru) == pytest.approx(1.0 + 4.0)
