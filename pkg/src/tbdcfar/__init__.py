"""Matrix-CFAR detection with total Bregman divergence and Riemannian centers."""
from .airm import DescentConfig, geodesic, exp_map, rd_mean, rd_median, riemannian_distance
from .clutter import ClutterParams, RngStream, Scene, build_sigma, steering_vector
from .detector import (
    ALL_DETECTORS,
    DetectionCurve,
    DetectorSpec,
    SolverSettings,
    calibrate_threshold,
    cfar_statistic,
    estimate_pd,
    toeplitz_covariance,
)
from .exceptions import (
    ConvergenceError,
    DimensionError,
    NotHermitianError,
    NotHPDError,
    SingularSystemError,
)
from .linalg import HermitianBasis, hermitian_basis
from .robustness import ESTIMATORS, EstimatorHandle, InfluenceCurve, InfluenceResult, influence
from .tbd import DivergenceKind, FixedPointConfig, tbd_mean, tbd_median, tbd_value

__version__ = "0.1.0"
