"""Basis-restricted elastic shape analysis of triangle meshes.

The public API re-exported here covers the mesh model, the discrepancy
measures, the split second-order metric, the latent model and its geodesic
solvers, basis construction and the generation utilities.
"""

from .basis import TangentSample, build_basis, motion_tangents, pca_basis, shape_tangents
from .container import load_basis, save_basis
from .discrepancy import (VarifoldConfig, VarifoldTarget, chamfer_distance, hausdorff_distance,
                          varifold_distance_sq, varifold_gradient)
from .errors import (BesaError, ConnectivityError, ConsistencyError, DegenerateFaceError,
                     DimensionError, MeshParseError, RankDeficiencyError, SolverError)
from .evaluation import EvalRecord, eval_reconstruction
from .generation import GMMModel, fit_gmm, sample_shape, transfer_motion
from .geodesics import (ScheduleConfig, geodesic_between_codes, ivp_step, retrieve_latent,
                        solve_bvp, solve_ivp)
from .latent import (Basis, LatentCode, LatentPath, decode, linear_interpolate, path_energy,
                     pullback_footpoint_grad, pullback_gram, pullback_inner)
from .mesh import FaceData, TriMesh, face_geometry, laplacian_apply, load_mesh, save_mesh
from .metric import (FootpointMetric, MetricParams, SplitDifferential, h2_inner,
                     h2_inner_footpoint_grad, split_differential)
from .optimize import OptimizerReport, minimize

__version__ = "0.1.0"
