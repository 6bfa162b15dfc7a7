"""Near-field beam prediction toolkit.

Pipeline: geometry-based mmWave channel generation, widebeam/ZC pilot
sounding, exhaustive-oracle labeling over an angle-distance codebook, and a
from-scratch CNN + GPT-2-style predictor trained with a masked
pretrain/finetune recipe.
"""

from .config import (
    FrameTiming,
    ModelConfig,
    RunConfig,
    SystemConfig,
    TrainConfig,
    build_run_config,
    pilot_symbol_budget,
    preset,
    run_preset,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DimensionError,
    NfbeamError,
    TrainingError,
)
from .estimator import BeamPredictor

__version__ = "0.1.0"

__all__ = [
    "BeamPredictor",
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "DimensionError",
    "FrameTiming",
    "ModelConfig",
    "NfbeamError",
    "RunConfig",
    "SystemConfig",
    "TrainConfig",
    "TrainingError",
    "build_run_config",
    "pilot_symbol_budget",
    "preset",
    "run_preset",
    "__version__",
]
