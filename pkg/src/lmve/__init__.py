"""Calibrated minimum-volume uncertainty ellipsoids for multivariate regression."""

from .center import CenterModel, fit_center, predict_center
from .data import Dataset, Split, load_csv, split_dataset, standardize
from .ellipsoid import Ellipsoid, contains, mahalanobis, scale_shape, volume
from .estimators import (
    CalibratedModel,
    conformal_calibrate,
    evaluate,
    fit_ge,
    fit_nle,
    oracle_shape,
)
from .gaussian import (
    JointGaussianSpec,
    chi2_inv_cdf,
    condition,
    mc_coverage,
    optimal_single_ellipsoid,
    optimal_volume,
    predict,
    random_joint_spec,
    sample_joint,
)
from .net import MlpParams, TrainConfig, fit_lmve

__version__ = "0.1.0"
