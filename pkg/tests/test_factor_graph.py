"""Gaussian message algebra and factor-graph assembly."""

import math
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridbp import (
    UNINFORMATIVE,
    Bus,
    FlowMeas,
    Gaussian1D,
    GridCase,
    InjMeas,
    Line,
    MeasurementSet,
    build_factor_graph,
    gaussian_product,
    gaussian_sum_message,
)
from gridbp.factor_graph import export_debug_text

INF = float("inf")

finite_means = st.floats(-1e6, 1e6, allow_nan=False)
finite_vars = st.floats(1e-6, 1e6, allow_nan=False)
gaussians = st.builds(Gaussian1D, finite_means, finite_vars)


# ---------------------------------------------------------------------------
# gaussian_product


def test_product_of_two_matches_precision_form():
    a, b = Gaussian1D(1.0, 2.0), Gaussian1D(5.0, 3.0)
    out = gaussian_product([a, b])
    precision = 1 / 2.0 + 1 / 3.0
    assert out.variance == pytest.approx(1 / precision, rel=1e-14)
    assert out.mean == pytest.approx((1.0 / 2.0 + 5.0 / 3.0) / precision, rel=1e-14)


@given(gaussians)
@settings(deadline=None)
def test_uninformative_is_identity(g):
    for msgs in ([g, UNINFORMATIVE], [UNINFORMATIVE, g]):
        out = gaussian_product(msgs)
        assert out.mean == pytest.approx(g.mean, rel=1e-12, abs=1e-12)
        assert out.variance == pytest.approx(g.variance, rel=1e-12)


@given(st.lists(gaussians, min_size=1, max_size=6))
@settings(deadline=None)
def test_product_precision_additive(msgs):
    out = gaussian_product(msgs)
    precision = sum(1.0 / m.variance for m in msgs)
    assert out.variance == pytest.approx(1.0 / precision, rel=1e-12)
    assert out.mean == pytest.approx(
        sum(m.mean / m.variance for m in msgs) / precision, rel=1e-9, abs=1e-9
    )
    # Variance can only shrink as information accumulates.
    assert out.variance <= min(m.variance for m in msgs) * (1 + 1e-12)


@given(st.lists(gaussians, min_size=2, max_size=5))
@settings(deadline=None)
def test_product_is_order_invariant(msgs):
    fwd = gaussian_product(msgs)
    rev = gaussian_product(list(reversed(msgs)))
    assert fwd.mean == pytest.approx(rev.mean, rel=1e-9, abs=1e-9)
    assert fwd.variance == pytest.approx(rev.variance, rel=1e-12)


def test_empty_product_is_flat():
    assert gaussian_product([]) == UNINFORMATIVE
    assert not UNINFORMATIVE.informative
    assert Gaussian1D(0.0, 1.0).informative


# ---------------------------------------------------------------------------
# gaussian_sum_message


def _hub_factor(z=10.0, variance=0.5):
    return InjMeas(bus_id=7, signs={1: +1, 2: -1, 3: +1}, z=z, variance=variance)


def test_sum_message_closed_form():
    f = _hub_factor()
    incoming = {2: Gaussian1D(3.0, 0.2), 3: Gaussian1D(-1.0, 0.3)}
    out = gaussian_sum_message(f, 1, incoming)
    # target sign +1: mean = z - (-1*3.0 + 1*(-1.0)), var = 0.5 + 0.2 + 0.3
    assert out.mean == pytest.approx(10.0 - (-3.0 - 1.0), rel=1e-14)
    assert out.variance == pytest.approx(1.0, rel=1e-14)
    # Negative target sign flips the mean.
    out2 = gaussian_sum_message(f, 2, {1: Gaussian1D(3.0, 0.2), 3: Gaussian1D(-1.0, 0.3)})
    assert out2.mean == pytest.approx(-(10.0 - (3.0 - 1.0)), rel=1e-14)


@given(
    z=finite_means,
    v=finite_vars,
    m2=gaussians,
    m3=gaussians,
)
@settings(deadline=None)
def test_sum_message_matches_formula(z, v, m2, m3):
    f = InjMeas(bus_id=1, signs={10: -1, 20: +1, 30: -1}, z=z, variance=v)
    out = gaussian_sum_message(f, 10, {20: m2, 30: m3})
    expect_mean = -1 * (z - (m2.mean - m3.mean))
    expect_var = v + m2.variance + m3.variance
    assert out.mean == pytest.approx(expect_mean, rel=1e-12, abs=1e-9)
    assert out.variance == pytest.approx(expect_var, rel=1e-12)


def test_sum_message_uninformative_paths():
    f = _hub_factor()
    # Flat incoming message -> flat output.
    out = gaussian_sum_message(f, 1, {2: UNINFORMATIVE, 3: Gaussian1D(0.0, 1.0)})
    assert out == UNINFORMATIVE
    # Flat factor -> flat output regardless of inputs.
    flat = InjMeas(bus_id=7, signs={1: +1, 2: -1}, z=0.0, variance=INF)
    assert gaussian_sum_message(flat, 1, {2: Gaussian1D(1.0, 1.0)}) == UNINFORMATIVE


def test_sum_message_error_paths():
    f = _hub_factor()
    with pytest.raises(TypeError):
        gaussian_sum_message(FlowMeas(1, 0.0, 1.0), 1, {})
    with pytest.raises(ValueError, match="not adjacent"):
        gaussian_sum_message(f, 99, {2: UNINFORMATIVE, 3: UNINFORMATIVE})
    with pytest.raises(ValueError, match="missing incoming"):
        gaussian_sum_message(f, 1, {2: Gaussian1D(0.0, 1.0)})  # no message for 3


def test_degree_one_factor_needs_no_incoming():
    f = InjMeas(bus_id=4, signs={5: -1}, z=2.5, variance=0.25)
    out = gaussian_sum_message(f, 5, {})
    assert out == Gaussian1D(-2.5, 0.25)


# ---------------------------------------------------------------------------
# build_factor_graph


def _tiny_case():
    buses = (Bus(1, 0.0), Bus(2, -0.01), Bus(3, 0.02))
    lines = (Line(1, 1, 2, 4.0), Line(2, 2, 3, 5.0))
    return GridCase("tiny", 100.0, buses, lines)


def _tiny_meas(**overrides):
    flow = {1: (1.5, 0.1), 2: (-0.5, 0.2)}
    injection = {1: (1.5, 0.3), 2: (-2.0, 0.4), 3: (0.5, INF)}
    base = {"flow": flow, "injection": injection}
    base.update(overrides)
    return MeasurementSet(flow=base["flow"], injection=base["injection"], seed=0)


def test_build_layout_and_signs():
    case = _tiny_case()
    graph = build_factor_graph(case, _tiny_meas())
    assert graph.variables == (1, 2)
    # One FlowMeas per line (case order), then one InjMeas per bus.
    assert [type(f).__name__ for f in graph.factors] == [
        "FlowMeas", "FlowMeas", "InjMeas", "InjMeas", "InjMeas",
    ]
    inj1, inj2, inj3 = graph.injection_factors
    assert inj1.signs == {1: +1}            # line 1 leaves bus 1
    assert inj2.signs == {1: -1, 2: +1}      # enters bus 2, leaves toward 3
    assert inj3.signs == {2: -1}
    assert graph.flow_factor(1) == FlowMeas(1, 1.5, 0.1)
    # Adjacency is consistent both ways.
    for lid in graph.variables:
        for fidx in graph.var_to_factors[lid]:
            assert lid in graph.factor_to_vars[fidx]


def test_build_missing_measurements_kept_as_flat_factors():
    case = _tiny_case()
    graph = build_factor_graph(case, _tiny_meas())
    inj3 = graph.injection_factors[2]
    assert inj3.variance == INF


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"flow": {1: (0.0, 0.1)}}, "lacks flow entries"),
        ({"flow": {1: (0.0, 0.1), 2: (0.0, 0.1), 9: (0.0, 0.1)}}, "unknown lines"),
        ({"injection": {1: (0.0, 0.1), 2: (0.0, 0.1)}}, "lacks injection entries"),
        (
            {"injection": {1: (0.0, 0.1), 2: (0.0, 0.1), 3: (0.0, 0.1), 99: (0.0, 0.1)}},
            "unknown buses",
        ),
    ],
)
def test_build_coverage_errors(overrides, message):
    with pytest.raises(ValueError, match=message):
        build_factor_graph(_tiny_case(), _tiny_meas(**overrides))


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_non_positive_variance_rejected_at_both_layers(bad):
    with pytest.raises(ValueError, match="non-positive variance"):
        _tiny_meas(flow={1: (0.0, bad), 2: (0.0, 0.1)})
    # The graph builder validates on its own for duck-typed measurement sets.
    raw = SimpleNamespace(
        flow={1: (0.0, bad), 2: (0.0, 0.1)},
        injection={1: (1.5, 0.3), 2: (-2.0, 0.4), 3: (0.5, INF)},
    )
    with pytest.raises(ValueError):
        build_factor_graph(_tiny_case(), raw)


def test_export_debug_text_roundtrips_fields():
    graph = build_factor_graph(_tiny_case(), _tiny_meas())
    text = export_debug_text(graph)
    assert "VAR 1" in text and "VAR 2" in text
    assert "FAC flow 1 1.5 0.1" in text
    assert "FAC inj 2 1:-1,2:+1" in text
    assert text.endswith("\n")
