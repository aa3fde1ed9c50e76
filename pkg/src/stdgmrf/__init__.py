"""Sparse spatiotemporal deep GMRFs: priors, variational learning and CG inference."""
from .errors import (
    InvalidEdge,
    InvalidInput,
    InvalidLattice,
    InvalidMask,
    InvalidObservation,
    NumericalFailure,
    SingularLayer,
    SolverDiverged,
    STDGMRFError,
    TooLarge,
    TrainingDiverged,
    Undefined,
    UnsupportedGraph,
)
from .graph import GraphSpec, build_periodic_lattice, load_graph, precompute_spectrum
from .layers import (
    SpatialLayerParams,
    TemporalLayerParams,
    spatial_apply,
    spatial_logdet,
    temporal_apply,
    temporal_stencil,
)
from .observations import ObservationSet
from .prior import (
    ModelParams,
    f_apply,
    ft_apply,
    information_vector,
    precision_matvec,
    prior_logdet,
    s_apply,
    st_apply,
)
from .vi import TrainConfig, VariationalParams, elbo, elbo_gradient, q_entropy_logdet, q_sample, train
from .infer import (
    PosteriorSummary,
    cg_solve,
    marginal_std,
    posterior_matvec,
    posterior_mean,
    posterior_sample,
    regularized_cg_solve,
)
from .oracle import dense_posterior, rts_smoother
from .metrics import crps_gaussian, rmse, stencil_pearson

__version__ = "0.1.0"
