"""3D attention-guided feature-pyramid segmentation for volumetric ultrasound.

Subpackages follow the pipeline: ``volume_data`` (I/O, phantoms, folds),
``backbone``/``pyramid``/``attention``/``head`` (network), ``loss``,
``metrics``/``stats`` (evaluation), ``trainer`` and ``cli``.
"""

from ._accel import HAVE_NUMBA
from .head import DAFNet, NetworkConfig, PredictionBundle, tiny_config
from .loss import LossWeights, total_loss
from .volume_data import Mask, PhantomSpec, Volume, synth_phantom

__version__ = "0.1.0"

__all__ = ["DAFNet", "HAVE_NUMBA", "LossWeights", "Mask", "NetworkConfig", "PhantomSpec",
           "PredictionBundle", "Volume", "synth_phantom", "tiny_config", "total_loss"]
