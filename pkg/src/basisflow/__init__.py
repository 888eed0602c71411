"""Homography flow bases: orthonormal 8-D flow subspace, fitting, alignment,
low-rank feature projection, unsupervised losses and a synthetic benchmark."""

from . import bases, bench, fitting, geometry, io, losses, subspace
from ._kernels import BACKEND
from .bases import BasisSet, analyze, build, synthesize
from .errors import *  # noqa: F401,F403
from .fitting import AlignConfig, RobustConfig, align_direct, fit_robust, fit_sparse
from .geometry import Homography, dlt, flow_to_homography, homography_to_flow, warp

__version__ = "0.1.0"
