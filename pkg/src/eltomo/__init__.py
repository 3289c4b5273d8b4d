"""Tomographic reconstruction with an edge-preserving Laplacian penalty.

The package covers the full pipeline: analytic phantoms, a sparse
parallel-beam projector with strip and linear kernels, penalty gradient
matrices (Tikhonov, TV, TV-l2, edge-preserving Laplacian), a
lagged-diffusivity fixed-point solver for least-squares data, an ML-EM
splitting solver for Poisson data, dual-grid data simulation and a
parameter-sweep/report harness.
"""

from .grids import GridSpec, Image, RegionMask, Sinogram, uniform_angles
from .phantoms import (Gaussian, Paraboloid, PhantomDescriptor, Rectangle,
                       default_ct_descriptor, generate_ct_phantom,
                       generate_et_phantom, load_descriptor, save_descriptor)
from .projector import (ProjectorSpec, SparseOperator, adjoint, apply_psf,
                        build_projector, default_detector, forward,
                        project_streaming)
from .regularizers import (ElWeights, Penalty, RegularizerMatrix,
                           build_gradient_matrix, compute_el_weights, el,
                           penalty_value, tikhonov, tv, tv_l2)
from .simulate import (CtSimSpec, Dataset, EtSimSpec, load_dataset,
                       make_ct_dataset, make_et_dataset, poisson_sample,
                       save_dataset)
from .solvers import (ErrorBoundReport, HistoryRecord, NumericalError,
                      ReconResult, SolverConfig, cgls,
                      fixed_point_reconstruct, history_csv,
                      mlem_split_reconstruct, verify_error_bound)
from .metrics import (MethodReport, SweepResult, SweepSpec, emit_report,
                      rmse, run_comparison, run_method, run_sweep)

__all__ = [
    "GridSpec", "Image", "RegionMask", "Sinogram", "uniform_angles",
    "Gaussian", "Paraboloid", "PhantomDescriptor", "Rectangle",
    "default_ct_descriptor", "generate_ct_phantom", "generate_et_phantom",
    "load_descriptor", "save_descriptor",
    "ProjectorSpec", "SparseOperator", "adjoint", "apply_psf",
    "build_projector", "default_detector", "forward", "project_streaming",
    "ElWeights", "Penalty", "RegularizerMatrix", "build_gradient_matrix",
    "compute_el_weights", "el", "penalty_value", "tikhonov", "tv", "tv_l2",
    "CtSimSpec", "Dataset", "EtSimSpec", "load_dataset", "make_ct_dataset",
    "make_et_dataset", "poisson_sample", "save_dataset",
    "ErrorBoundReport", "HistoryRecord", "NumericalError", "ReconResult",
    "SolverConfig", "cgls", "fixed_point_reconstruct", "history_csv",
    "mlem_split_reconstruct", "verify_error_bound",
    "MethodReport", "SweepResult", "SweepSpec", "emit_report", "rmse",
    "run_comparison", "run_method", "run_sweep",
]

__version__ = "0.1.0"
