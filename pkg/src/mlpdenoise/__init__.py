"""Patch-based MLP image denoisers: training, application and introspection."""

from .mlp import Architecture, Mlp, parse_architecture, init_mlp, forward, backward, sgd_step, save, load
from .noise import NoiseSpec, apply_noise
from .patches import PatchGeometry, normalize, denormalize, denoise_image, psnr
from .numerics import make_rng, child_rng

__version__ = "0.1.0"
