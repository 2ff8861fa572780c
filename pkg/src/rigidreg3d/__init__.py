"""Two-stage rigid registration of large multimodal 3D volumes.

Stage 1 aligns surface point clouds (FPFH feature RANSAC, then point-to-plane
ICP); stage 2 recovers the residual translation with masked normalised
cross-correlation computed in the Fourier domain.
"""

from .errors import RegistrationError
from .pipeline import PipelineConfig, RegistrationResult, preprocess_pair, random_pretransform, register
from .volume import Volume, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "RegistrationError",
    "RegistrationResult",
    "Volume",
    "load_volume",
    "preprocess_pair",
    "random_pretransform",
    "register",
    "save_volume",
]
