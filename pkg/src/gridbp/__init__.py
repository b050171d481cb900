"""Gaussian belief propagation for power-grid state estimation.

The package estimates line flows on a DC grid model from noisy flow and
net-injection measurements by message passing on a flows-only factor graph,
with an exact weighted-least-squares solver as oracle.  On top of the
estimator sit Monte-Carlo observability/retrievability experiments,
measurement-placement strategies, and covariance-aware coarse-graining of
the grid into areas.

Hot message-passing loops run in a compiled extension when available;
:data:`KERNEL_BACKEND` names the implementation actually loaded ("cython"
or "python", forceable via the ``GRIDBP_PURE_PYTHON`` environment
variable).
"""

from importlib.metadata import PackageNotFoundError, version

from . import _kernels
from .bp_engine import (
    BpNumericalError,
    BpOptions,
    BpResult,
    retrieval_profile,
    run_bp,
    write_trace_csv,
)
from .coarse_grain import (
    AcceptedMove,
    AreaFlowReport,
    Partition,
    SearchResult,
    area_connectivity,
    area_flow_covariance,
    area_flows,
    area_pairs,
    boundary_lines,
    linear_response_covariance,
    partition_score,
    partition_search,
    read_partition,
    write_partition,
    write_report_csvs,
)
from .exact_solver import (
    WlsSolution,
    exact_covariance,
    total_squared_error,
    wls_angles,
    wls_flows,
)
from .experiments import (
    EnsembleResult,
    EnsembleSpec,
    FractionStats,
    correlation_C,
    correlation_M,
    effective_dof,
    observability_probability,
    retrievability_fraction,
    run_ensemble,
    timing_benchmark,
    variance_ratio_by_depth,
    write_ensemble_csvs,
    write_manifest,
    write_timing_csv,
)
from .factor_graph import (
    FactorGraph,
    FlowMeas,
    Gaussian1D,
    InjMeas,
    UNINFORMATIVE,
    build_factor_graph,
    gaussian_product,
    gaussian_sum_message,
)
from .grid_model import (
    Bus,
    CdfParseError,
    GridCase,
    Line,
    TopologyError,
    bundled_case_names,
    derive_dc_state,
    import_cdf,
    load_case,
    load_snapshot,
    save_snapshot,
    topology_stats,
)
from .scenarios import (
    STRATEGIES,
    MeasurementSet,
    MissingMask,
    count_retrievable,
    injection_retrievable,
    make_mask,
    read_measurements_csv,
    sample_measurements,
    write_measurements_csv,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

#: Name of the message-passing kernel in use: "cython" or "python".
KERNEL_BACKEND = _kernels.BACKEND

__all__ = [
    "__version__",
    "KERNEL_BACKEND",
    # grid_model
    "Bus", "Line", "GridCase", "CdfParseError", "TopologyError",
    "import_cdf", "derive_dc_state", "topology_stats",
    "save_snapshot", "load_snapshot", "bundled_case_names", "load_case",
    # factor_graph
    "Gaussian1D", "UNINFORMATIVE", "gaussian_product", "gaussian_sum_message",
    "FlowMeas", "InjMeas", "FactorGraph", "build_factor_graph",
    # bp_engine
    "BpOptions", "BpResult", "BpNumericalError", "run_bp",
    "retrieval_profile", "write_trace_csv",
    # exact_solver
    "WlsSolution", "wls_flows", "wls_angles", "exact_covariance",
    "total_squared_error",
    # scenarios
    "STRATEGIES", "MeasurementSet", "MissingMask", "make_mask",
    "sample_measurements", "injection_retrievable", "count_retrievable",
    "write_measurements_csv", "read_measurements_csv",
    # experiments
    "EnsembleSpec", "FractionStats", "EnsembleResult", "run_ensemble",
    "observability_probability", "retrievability_fraction", "effective_dof",
    "correlation_C", "correlation_M", "variance_ratio_by_depth",
    "timing_benchmark", "write_ensemble_csvs", "write_timing_csv",
    "write_manifest",
    # coarse_grain
    "Partition", "AreaFlowReport", "AcceptedMove", "SearchResult",
    "read_partition", "write_partition", "area_connectivity",
    "area_pairs", "boundary_lines", "area_flows", "linear_response_covariance",
    "area_flow_covariance", "partition_score", "partition_search",
    "write_report_csvs",
]
