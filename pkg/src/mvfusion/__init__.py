"""Multistatic sensing simulation, covariance imaging and multi-view fusion."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    Annulus,
    Array2D,
    Disc,
    FieldOfView,
    Polygon,
    RasterMask,
    RegionOfInterest,
    Scene,
)
from .simulate import (  # noqa: F401
    NoiseModel,
    Pilot,
    SampleCovariance,
    ScattererCloud,
    make_pilot,
    noise_variance_from_psd,
    sample_cloud,
    simulate_frames,
    true_covariance,
)
from .single_view import Phase1Config, Phase1Result, run_phase1, threshold_support  # noqa: F401
from .interp import EPConfig, RegularRaster, interpolate  # noqa: F401
from .fusion import FusionConfig, FusionInputs, run_fusion  # noqa: F401
from .metrics import MetricsReport, coherence, iou, matched_filter_baseline, p_islr  # noqa: F401
from .configio import RunConfig, run_config_from_ini, scene_from_ini, scene_to_ini  # noqa: F401
from .pipeline import preset, run  # noqa: F401
