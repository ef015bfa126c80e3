"""Kernel density estimation of the invariant law of bifurcating Markov chains."""

from .density import DensityOracle, bias, bochner_check, oracle_for, smoothed_density
from .estimator import GEN, TREE, RegionSelector, additive_functional, confidence_interval, kde
from .kernels import BASE_KERNELS, EPANECHNIKOV, GAUSSIAN, BandwidthSchedule, get_kernel, make_higher_order
from .models import FiniteBMC, GaussianBAR, TreeData, simulate_forest, simulate_tree

__version__ = "0.1.0"

__all__ = [
    "BASE_KERNELS", "EPANECHNIKOV", "GAUSSIAN", "GEN", "TREE", "BandwidthSchedule", "DensityOracle",
    "FiniteBMC", "GaussianBAR", "RegionSelector", "TreeData", "additive_functional", "bias",
    "bochner_check", "confidence_interval", "get_kernel", "kde", "make_higher_order", "oracle_for",
    "simulate_forest", "simulate_tree", "smoothed_density",
]
