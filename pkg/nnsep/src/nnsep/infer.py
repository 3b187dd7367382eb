"""Chip-directory inference.

Reads every complete ``<id>.input.c0/c1/c2`` triple in a directory, runs the
network, and writes ``<id>.pred.cls`` (argmax class, with background forced
to 0 wherever the input mask is 0) and ``<id>.pred.skel`` (sigmoid skeleton
probability, zeroed outside the mask).  Chips whose sides are not multiples
of 16 are zero-padded on the bottom/right for the forward pass and cropped
back, so ragged edge chips work unchanged.

Inference is stateless per chip and deterministic: equal inputs and
checkpoint produce byte-identical outputs.
"""

from __future__ import annotations

import numpy as np
import torch

from nnsep import chipio
from nnsep.data import stack_channels
from nnsep.model import STRIDE
from nnsep.train import load_checkpoint

__all__ = ["infer_chips"]


def _pad_to_stride(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    _, h, w = x.shape
    ph = (-h) % STRIDE
    pw = (-w) % STRIDE
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)))
    return x, h, w


def infer_chips(
    checkpoint_path,
    directory,
    device: str = "cpu",
    batch_size: int = 4,
) -> list[str]:
    """Predict all chips in ``directory``; returns the chip ids processed."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    model, meta = load_checkpoint(checkpoint_path, device=device)
    dist_norm = float(meta["dist_norm"])
    ids = chipio.list_chip_ids(directory)

    # Group chips by padded shape so batches stack cleanly.
    prepared = []
    for chip_id in ids:
        mask, skeleton, distance = chipio.read_chip_inputs(directory, chip_id)
        x, h, w = _pad_to_stride(
            stack_channels(mask, skeleton, distance, dist_norm=dist_norm)
        )
        prepared.append((chip_id, x, h, w, mask))
    by_shape: dict[tuple[int, int], list[int]] = {}
    for i, (_, x, _, _, _) in enumerate(prepared):
        by_shape.setdefault(x.shape[1:], []).append(i)

    with torch.no_grad():
        for shape in sorted(by_shape):
            members = by_shape[shape]
            for lo in range(0, len(members), batch_size):
                batch = [prepared[i] for i in members[lo : lo + batch_size]]
                x = torch.from_numpy(np.stack([b[1] for b in batch])).to(device)
                class_logits, skel_logits = model(x)
                cls = class_logits.argmax(dim=1).cpu().numpy().astype(np.uint8)
                prob = torch.sigmoid(skel_logits)[:, 0].cpu().numpy()
                for (chip_id, _, h, w, mask), c, p in zip(batch, cls, prob):
                    c = c[:h, :w].copy()
                    p = p[:h, :w].astype(np.float32)
                    background = mask.data == 0
                    c[background] = 0
                    p = np.clip(np.where(background, 0.0, p), 0.0, 1.0)
                    chipio.write_chip_pred(directory, chip_id, c, p, mask)
    return ids
