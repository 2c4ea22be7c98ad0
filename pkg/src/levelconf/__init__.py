"""Confidence regions for density level sets and isosurfaces.

Kernel density estimates (plain, bias-corrected, bootstrap mean), contour
extraction, gradient integral curves, extreme-value and bootstrap quantiles,
vertical and horizontal confidence regions, and a Monte-Carlo coverage
harness for the built-in Gaussian test models.
"""

__version__ = "0.1.0"

from .density import Bandwidths, Dataset, DensityEstimator, fit, read_dataset, write_dataset
from .evt import BandwidthTooLargeError, a_hat, b_hat, build_cn1, z_of_alpha
from .flow import FlowOptions, hitting_point, trace_batch, trace_to_level
from .geometry import Contour, GridSpec, extract_contour, hausdorff, resample
from .harness import ExperimentConfig, confidence_region, emit_report, load_config, run_case
from .kernel import KernelSpec, constants, get_kernel
from .models import Elliptic, Mixture, get_preset, level_of_probability
from .regions import (
    GradientTubeRegion,
    RegionPair,
    TubeRegion,
    VerticalRegion,
    covers_isosurface,
    measure,
)

__all__ = [
    "__version__",
    "Bandwidths", "Dataset", "DensityEstimator", "fit", "read_dataset", "write_dataset",
    "BandwidthTooLargeError", "a_hat", "b_hat", "build_cn1", "z_of_alpha",
    "FlowOptions", "hitting_point", "trace_batch", "trace_to_level",
    "Contour", "GridSpec", "extract_contour", "hausdorff", "resample",
    "ExperimentConfig", "confidence_region", "emit_report", "load_config", "run_case",
    "KernelSpec", "constants", "get_kernel",
    "Elliptic", "Mixture", "get_preset", "level_of_probability",
    "GradientTubeRegion", "RegionPair", "TubeRegion", "VerticalRegion", "covers_isosurface",
    "measure",
]
