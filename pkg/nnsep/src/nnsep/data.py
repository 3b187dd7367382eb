"""Training data: manifest-driven chip dataset with geometric augmentation.

Scene manifests are JSON documents with a ``scenes`` list whose entries name
the per-scene rasters.  Training requires the network-input channels to be
present (``input_c1`` skeleton, ``input_c2`` distance transform,
``skeleton_label``) alongside ``input`` and ``label``; manifests generated
without them are rejected with a pointer to regenerate.

The three input channels are stacked mask/skeleton/distance; the distance
channel is divided by :data:`DIST_NORM` so typical values land near [0, 1].
Scenes are split 80/20 into train/val by manifest order (the manifest order
is already seeded), train-time augmentation applies horizontal/vertical
flips plus a random rotation with shift and scale up to 10%, and loading is
parallelized through standard DataLoader workers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F
from torch.utils.data import DataLoader, Dataset

from nnsep.chipio import Raster, read_raster

__all__ = [
    "DIST_NORM",
    "ChipRecord",
    "load_manifest",
    "split_records",
    "stack_channels",
    "ChipDataset",
    "make_loaders",
]

#: divisor for the distance-transform channel (pixels); keeps typical
#: corridor half-widths near unit scale.  Stored in checkpoints so
#: inference always matches training.
DIST_NORM = 32.0

_REQUIRED_KEYS = ("input", "input_c1", "input_c2", "label", "skeleton_label")

#: train-time augmentation bounds: shift and scale vary by up to 10%
_MAX_SHIFT = 0.1
_MAX_SCALE = 0.1


@dataclass(frozen=True)
class ChipRecord:
    """Absolute paths of one training scene's rasters."""

    mask: str
    skeleton: str
    distance: str
    label: str
    skeleton_label: str


def load_manifest(path) -> list[ChipRecord]:
    """Read a scene manifest into records, validating channel availability."""
    path = str(path)
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    scenes = doc.get("scenes")
    if not isinstance(scenes, list) or not scenes:
        raise ValueError(f"manifest {path} has no scenes")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    for i, entry in enumerate(scenes):
        missing = [k for k in _REQUIRED_KEYS if k not in entry]
        if missing:
            raise ValueError(
                f"manifest {path} scene {i} lacks {missing}; regenerate the "
                f"dataset with network channels enabled (nn_channels)"
            )
        records.append(
            ChipRecord(
                mask=os.path.join(base, entry["input"]),
                skeleton=os.path.join(base, entry["input_c1"]),
                distance=os.path.join(base, entry["input_c2"]),
                label=os.path.join(base, entry["label"]),
                skeleton_label=os.path.join(base, entry["skeleton_label"]),
            )
        )
    return records


def split_records(
    records: list[ChipRecord], val_fraction: float = 0.2
) -> tuple[list[ChipRecord], list[ChipRecord]]:
    """Deterministic train/val split by manifest order.

    The two fractions always sum to 1; both splits are non-empty.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    if len(records) < 2:
        raise ValueError(f"need at least 2 scenes to split, got {len(records)}")
    n_val = min(len(records) - 1, max(1, round(len(records) * val_fraction)))
    return records[: len(records) - n_val], records[len(records) - n_val :]


def stack_channels(
    mask: Raster, skeleton: Raster, distance: Raster, dist_norm: float = DIST_NORM
) -> np.ndarray:
    """Stack the three input rasters into a float32 (3, H, W) array."""
    return np.stack(
        [
            mask.data.astype(np.float32),
            skeleton.data.astype(np.float32),
            distance.data.astype(np.float32) / float(dist_norm),
        ]
    )


def _augment(
    x: torch.Tensor, y: torch.Tensor, s: torch.Tensor, rng: np.random.Generator
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Random flips plus a rotation/shift/scale warp, applied consistently.

    All resampling is nearest-neighbor so mask/label values stay crisp;
    out-of-frame areas fill with background zeros.
    """
    if rng.random() < 0.5:
        x, y, s = x.flip(-1), y.flip(-1), s.flip(-1)
    if rng.random() < 0.5:
        x, y, s = x.flip(-2), y.flip(-2), s.flip(-2)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    scale = 1.0 + rng.uniform(-_MAX_SCALE, _MAX_SCALE)
    tx = rng.uniform(-_MAX_SHIFT, _MAX_SHIFT)
    ty = rng.uniform(-_MAX_SHIFT, _MAX_SHIFT)
    cos, sin = math.cos(angle) / scale, math.sin(angle) / scale
    theta = torch.tensor(
        [[cos, -sin, tx], [sin, cos, ty]], dtype=torch.float32
    ).unsqueeze(0)
    stacked = torch.cat([x, y.unsqueeze(0).to(torch.float32), s]).unsqueeze(0)
    grid = F.affine_grid(theta, stacked.shape, align_corners=False)
    warped = F.grid_sample(
        stacked, grid, mode="nearest", padding_mode="zeros", align_corners=False
    ).squeeze(0)
    n_in = x.shape[0]
    return (
        warped[:n_in],
        warped[n_in].round().to(torch.int64),
        warped[n_in + 1 :],
    )


class ChipDataset(Dataset):
    """Scenes as ``(input 3xHxW float32, label HxW int64, skeleton 1xHxW float32)``.

    Augmentation draws are keyed by ``(seed, epoch, index)``, so runs are
    reproducible regardless of loader worker count; call :meth:`set_epoch`
    between epochs to refresh the draws.
    """

    def __init__(self, records: list[ChipRecord], augment: bool = False, seed: int = 0):
        self.records = list(records)
        self.augment = augment
        self.seed = int(seed)
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = int(epoch)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        rec = self.records[idx]
        x = torch.from_numpy(
            stack_channels(
                read_raster(rec.mask),
                read_raster(rec.skeleton),
                read_raster(rec.distance),
            )
        )
        y = torch.from_numpy(read_raster(rec.label).data.astype(np.int64))
        s = torch.from_numpy(
            read_raster(rec.skeleton_label).data.astype(np.float32)
        ).unsqueeze(0)
        if self.augment:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, self.epoch, idx])
            )
            x, y, s = _augment(x, y, s, rng)
        return x, y, s


def make_loaders(
    train_records: list[ChipRecord],
    val_records: list[ChipRecord],
    batch_size: int,
    seed: int = 0,
    augment: bool = True,
    num_workers: int = 0,
) -> tuple[DataLoader, DataLoader, ChipDataset]:
    """Train loader (shuffled, augmented, incomplete last batch dropped) and
    val loader (ordered, unaugmented, complete)."""
    train_ds = ChipDataset(train_records, augment=augment, seed=seed)
    val_ds = ChipDataset(val_records, augment=False)
    gen = torch.Generator()
    gen.manual_seed(seed)
    train_loader = DataLoader(
        train_ds,
        batch_size=batch_size,
        shuffle=True,
        drop_last=len(train_records) > batch_size,
        generator=gen,
        num_workers=num_workers,
    )
    val_loader = DataLoader(
        val_ds, batch_size=batch_size, shuffle=False, num_workers=num_workers
    )
    return train_loader, val_loader, train_ds
