"""Object removal that continues broken edges through the hole before filling texture."""

from .config import ConfigError, JobConfig, parse_config
from .imagery import ImageError, MaskRegion, RasterImage, load_image, load_mask, save_image
from .pipeline import JobReport, StageError, complete, complete_arrays, run_pipeline

__all__ = [
    "ConfigError",
    "ImageError",
    "JobConfig",
    "JobReport",
    "MaskRegion",
    "RasterImage",
    "StageError",
    "complete",
    "complete_arrays",
    "load_image",
    "load_mask",
    "parse_config",
    "run_pipeline",
    "save_image",
]

__version__ = "0.1.0"
