"""Non-stationary geostatistics: closed-form covariances, local inference, kriging, simulation."""
from .anisotropy import AnisotropyParams, NotSPDError, matrix_to_params, params_to_matrix
from .covariance import (
    Cauchy,
    ConstantAnisotropy,
    ConstantField,
    Exponential,
    Gaussian,
    Matern,
    NsModel,
    StationaryBaseline,
    covariance_matrix,
    make_family,
    ns_correlation,
    ns_covariance,
)
from .estimation import (
    ParameterField,
    PipelineSettings,
    estimate_anchors,
    fit_baseline,
    fit_field,
    fit_local,
    select_delta,
    select_epsilon,
)
from .grid import Grid
from .metrics import ScoreReport, score
from .prediction import KrigingResult, krige, krige_baseline
from .simulation import conditional_simulate, gibbs_propagative, unconditional_simulate
from .variogram import Dataset, LagSystem, local_variogram, matheron_variogram

__version__ = "0.1.0"
