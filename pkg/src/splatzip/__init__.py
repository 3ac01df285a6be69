"""Compact storage for 3D Gaussian splatting scenes.

A scene is distilled into per-Gaussian features plus a tiny neural field,
pruned by rendering importance, sub-vector quantized and packed into a
single LZMA-wrapped ``.omg`` container.
"""

from .core import Camera, InvalidInputError, OmgGaussianSet, SourceGaussianSet, build_covariance, eval_sh
from .codec import PipelineConfig, compress, decode_scene, encode_scene, inspect
from .field import DistillConfig, FieldArch, FieldWeights, distill_fit, export_decoded
from .importance import TAU_PRESETS
from .metrics import MetricReport, psnr, ssim
from .ply_io import load_cameras, load_ply, save_cameras, write_ply
from .rasterizer import render, render_with_stats
from .svq import SvqConfig

__version__ = "0.1.0"
