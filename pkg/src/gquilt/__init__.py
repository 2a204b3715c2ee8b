"""Graph quilting: Gaussian graphical models when some variable pairs are never observed together."""
__version__ = "0.1.0"

from .edges import EdgeSet
from .estimators import (DistortionStats, GraphMetrics, compare_graphs, distortion_stats, estimate_graph_S,
                         estimate_graph_U, latent_subgraph, min_sample_sizes, roc_auc, tau_from_sparsity,
                         threshold_edges)
from .gqlasso import PenaltySpec, SolverError, SolverReport, fit_path, glasso_fit, gqlasso_fit, oracle_lambda
from .madgq import (NotCompletableError, PartitionABC, PrecisionEstimate, check_identifiability,
                    check_mutual_incoherence, madgq_complete, madgq_k2_closed_form, schur_entangle)
from .reco import (RecoResult, reco_k2_known, reco_k2_unknown, reco_known_diag, reco_unknown_diag,
                   structure_count)
from .scheme import (IndicatorData, ObservationScheme, PartialCovariance, SchemeError, build_scheme,
                     missingness_ratio, observed_covariance)
