"""rollinf: static and roll-out operator inference for polynomial reduced models."""

from .basis import ReducedBasis, lift, pod_basis, project
from .datamodel import (SparseMask, TimeGrid, Trajectory, TrajectoryDataset,
                        add_noise, load_dataset, load_matrix, save_dataset,
                        save_matrix, sparsify)
from .metrics import (interpolate_operators, projection_error,
                      time_averaged_relative_error)
from .polymodel import (MonomialIndexing, PolyModel, Scheme, feature_map,
                        load_model, monomial_count, rhs, save_model, simulate,
                        step)
from .rolloutopinf import (InitStrategy, RollConfig, TrainConfig, TrainReport,
                           log_spaced_increments, rollout_gradient,
                           rollout_objective, train)
from .stability import (StabilityReport, averaged_bound, lyapunov_solve,
                        stability_radius_bound)
from .staticopinf import (RegressionSystem, approx_derivatives,
                          assemble_system, solve_min_norm)

__version__ = "0.1.0"
