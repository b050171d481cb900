"""Packed-graph layout and compiled-vs-pure-Python kernel parity."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from gridbp import BpOptions, build_factor_graph, load_case, run_bp
from gridbp import _kernels
from gridbp.scenarios import make_mask, sample_measurements

try:
    _kernels.load_backend("cython")
    HAS_CYTHON = True
except ImportError:
    HAS_CYTHON = False

needs_cython = pytest.mark.skipif(not HAS_CYTHON, reason="compiled kernel not built")


def _graph(case, fraction=0.0, seed=0):
    mask = make_mask(case, fraction, "Uniform", seed)
    meas = sample_measurements(case, mask, 1e-4, seed)
    return build_factor_graph(case, meas)


def test_pack_layout(ieee14):
    graph = _graph(ieee14)
    packed = _kernels.pack_graph(graph)
    n_lines = len(ieee14.lines)
    assert packed.line_ids == tuple(ln.id for ln in ieee14.lines)
    assert packed.flow_z.shape == (n_lines,)
    assert packed.flow_var.shape == (n_lines,)
    # Every line sits between exactly two injection factors.
    assert packed.line_edges.shape == (n_lines, 2)
    assert packed.edge_line.shape[0] == 2 * n_lines
    # Sibling pointers pair up the two edges of each line.
    for e in range(packed.edge_line.shape[0]):
        s = packed.edge_sibling[e]
        assert s != e
        assert packed.edge_sibling[s] == e
        assert packed.edge_line[s] == packed.edge_line[e]
    # Signs are +/-1 and factor slices are well formed.
    assert set(np.unique(packed.edge_sign)) <= {-1, 1}
    assert packed.fac_ptr[0] == 0
    assert packed.fac_ptr[-1] == packed.edge_line.shape[0]
    assert np.all(np.diff(packed.fac_ptr) >= 1)


def test_pack_rejects_malformed_adjacency(ieee14):
    graph = _graph(ieee14)
    # Drop one injection factor entirely: its lines now have a single edge.
    import dataclasses

    factors = tuple(
        f for i, f in enumerate(graph.factors) if i != len(graph.variables)
    )
    broken = dataclasses.replace(graph, factors=factors)
    with pytest.raises(ValueError):
        _kernels.pack_graph(broken)


def test_load_backend_names():
    assert callable(_kernels.load_backend("python"))
    with pytest.raises(ValueError):
        _kernels.load_backend("fortran")


@needs_cython
def test_default_backend_prefers_compiled():
    if os.environ.get("GRIDBP_PURE_PYTHON", "0") not in ("", "0"):
        pytest.skip("suite forced onto the pure-Python kernel")
    assert _kernels.BACKEND == "cython"


def test_env_var_forces_pure_python():
    env = dict(os.environ, GRIDBP_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import gridbp; print(gridbp.KERNEL_BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"


@needs_cython
@pytest.mark.parametrize(
    "name, fraction, seed",
    [("ieee14", 0.0, 0), ("ieee57", 0.3, 3), ("ieee118", 0.5, 7)],
)
def test_backend_parity(name, fraction, seed):
    """Both kernels run the same schedule; beliefs agree to fp reordering."""
    graph = _graph(load_case(name), fraction, seed)
    opts = BpOptions()
    py = run_bp(graph, opts, backend="python")
    cy = run_bp(graph, opts, backend="cython")
    assert py.converged == cy.converged
    assert py.iterations == cy.iterations
    assert py.first_finite_iter == cy.first_finite_iter
    for lid in graph.variables:
        a, b = py.beliefs[lid], cy.beliefs[lid]
        if math.isinf(a.variance) or math.isinf(b.variance):
            assert a.variance == b.variance == float("inf")
            continue
        assert b.mean == pytest.approx(a.mean, rel=1e-9, abs=1e-9)
        assert b.variance == pytest.approx(a.variance, rel=1e-9, abs=1e-12)


@needs_cython
def test_backend_parity_with_damping_and_trace(ieee30):
    graph = _graph(ieee30, 0.2, 5)
    opts = BpOptions(damping=0.4, record_trace=True)
    py = run_bp(graph, opts, backend="python")
    cy = run_bp(graph, opts, backend="cython")
    assert py.iterations == cy.iterations
    assert py.trace is not None and cy.trace is not None
    assert py.trace.shape == cy.trace.shape
    # Identical finite-variable counts per sweep; deltas agree loosely.
    assert np.array_equal(py.trace[:, 2], cy.trace[:, 2])
    np.testing.assert_allclose(py.trace[:2, :2], cy.trace[:2, :2], rtol=1e-6, atol=1e-12)
