"""Neural radiance caching for a CPU path tracer."""

from .cache import NeuralRadianceCache, RadianceQuery, TrainingRecords, lcg_permute
from .config import RenderConfig
from .encoding import encode_query, freq_encode, one_blob, quartic, sph, tri
from .mlp import NetworkWeights, infer, naive_infer, train_pass
from .optim import AdamState, EmaState, adam_step, ema_update, relative_l2_loss
from .scene import Camera, Material, Mesh, Quad, Scene, SceneError, Sphere

__version__ = "0.1.0"
