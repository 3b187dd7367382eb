"""Neural chip separator.

Learns to split woody-vegetation masks into linear and non-linear classes
from three-channel chip stacks (mask, skeleton, distance transform) and to
predict a skeleton-probability map.  Talks to the surrounding tooling purely
through files: PGM/f32 rasters with JSON sidecars, exchanged in chip
directories (``<id>.input.c0/c1/c2`` in, ``<id>.pred.cls/skel`` out).
"""

from nnsep.chipio import Raster, read_raster, write_raster, list_chip_ids
from nnsep.loss import LossConfig, composite_loss
from nnsep.model import ModelConfig, SeparatorNet

__all__ = [
    "Raster",
    "read_raster",
    "write_raster",
    "list_chip_ids",
    "LossConfig",
    "composite_loss",
    "ModelConfig",
    "SeparatorNet",
]
