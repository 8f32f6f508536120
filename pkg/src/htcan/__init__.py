"""Stereo image super-resolution in three stages on a small numpy autodiff core."""

from .errors import ConfigError, ContractError, HtcanError, LoadError, ShapeError, UsageError
from .pixel_ops import GeomTransform, StereoPair
from .stage1 import Stage1Config, Tiling
from .stage2 import Stage2Config
from .tensor import Tape, Tensor, backward, precision
from .weights import WeightStore

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "HtcanError", "LoadError", "ShapeError", "UsageError",
    "GeomTransform", "StereoPair", "Stage1Config", "Tiling", "Stage2Config",
    "Tape", "Tensor", "backward", "precision", "WeightStore",
]
