"""Composite training loss: weighted cross-entropy, Dice, skeleton BCE.

The total is

``L = wCE + 0.3 * Dice(linear) + 0.5 * BCE(skeleton)``

with

* ``wCE = -(1/N) * sum_i w(y_i) * log p_hat(y_i)`` over all N pixels, with
  per-class weights (1, 50, 5) for background / linear / non-linear —
  note the plain 1/N normalization, not the weighted-mean variant;
* ``Dice = 1 - (2 * sum(p_1 * y_1) + 1) / (sum(p_1) + sum(y_1) + 1)``
  computed on the softmax probability of the linear class only, with
  smoothing constant 1 so empty batches are well defined;
* skeleton BCE on logits against the {0, 1} skeleton label map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch.nn import functional as F

__all__ = [
    "LossConfig",
    "weighted_cross_entropy",
    "dice_loss_linear",
    "skeleton_bce",
    "loss_components",
    "composite_loss",
]


@dataclass(frozen=True)
class LossConfig:
    """Weights of the composite loss; every weight must be positive."""

    class_weights: tuple[float, ...] = (1.0, 50.0, 5.0)
    dice_weight: float = 0.3
    skeleton_weight: float = 0.5
    dice_smooth: float = 1.0

    def __post_init__(self):
        weights = tuple(float(w) for w in self.class_weights)
        if not weights or any(w <= 0 for w in weights):
            raise ValueError(
                f"class_weights must all be positive, got {self.class_weights}"
            )
        for name in ("dice_weight", "skeleton_weight", "dice_smooth"):
            if getattr(self, name) <= 0:
                raise ValueError(
                    f"{name} must be positive, got {getattr(self, name)}"
                )
        object.__setattr__(self, "class_weights", weights)


def _check_shapes(
    class_logits: torch.Tensor,
    skeleton_logits: torch.Tensor,
    class_labels: torch.Tensor,
    skeleton_labels: torch.Tensor,
    n_classes: int,
) -> None:
    if class_logits.ndim != 4 or class_logits.shape[1] != n_classes:
        raise ValueError(
            f"class_logits must be (B, {n_classes}, H, W), got "
            f"{tuple(class_logits.shape)}"
        )
    b, _, h, w = class_logits.shape
    if class_labels.shape != (b, h, w):
        raise ValueError(
            f"class_labels must be (B, H, W) = {(b, h, w)}, got "
            f"{tuple(class_labels.shape)}"
        )
    if skeleton_logits.shape != (b, 1, h, w):
        raise ValueError(
            f"skeleton_logits must be (B, 1, H, W) = {(b, 1, h, w)}, got "
            f"{tuple(skeleton_logits.shape)}"
        )
    if skeleton_labels.shape != (b, 1, h, w):
        raise ValueError(
            f"skeleton_labels must be (B, 1, H, W) = {(b, 1, h, w)}, got "
            f"{tuple(skeleton_labels.shape)}"
        )


def weighted_cross_entropy(
    class_logits: torch.Tensor,
    class_labels: torch.Tensor,
    weights: tuple[float, ...],
) -> torch.Tensor:
    """Per-pixel weighted negative log-likelihood, averaged over all pixels."""
    n_classes = class_logits.shape[1]
    if int(class_labels.min()) < 0 or int(class_labels.max()) >= n_classes:
        raise ValueError(
            f"class labels must lie in [0, {n_classes - 1}], got range "
            f"[{int(class_labels.min())}, {int(class_labels.max())}]"
        )
    log_p = F.log_softmax(class_logits, dim=1)
    picked = log_p.gather(1, class_labels.unsqueeze(1).long()).squeeze(1)
    w = torch.tensor(
        weights, dtype=class_logits.dtype, device=class_logits.device
    )[class_labels.long()]
    return -(w * picked).mean()


def dice_loss_linear(
    class_logits: torch.Tensor,
    class_labels: torch.Tensor,
    smooth: float = 1.0,
) -> torch.Tensor:
    """Soft Dice loss of the linear class (index 1) over the whole batch."""
    p = F.softmax(class_logits, dim=1)[:, 1]
    y = (class_labels == 1).to(p.dtype)
    numerator = 2.0 * (p * y).sum() + smooth
    denominator = p.sum() + y.sum() + smooth
    return 1.0 - numerator / denominator


def skeleton_bce(
    skeleton_logits: torch.Tensor, skeleton_labels: torch.Tensor
) -> torch.Tensor:
    """Mean binary cross-entropy on skeleton logits."""
    return F.binary_cross_entropy_with_logits(
        skeleton_logits, skeleton_labels.to(skeleton_logits.dtype)
    )


def loss_components(
    class_logits: torch.Tensor,
    skeleton_logits: torch.Tensor,
    class_labels: torch.Tensor,
    skeleton_labels: torch.Tensor,
    config: LossConfig | None = None,
) -> dict[str, torch.Tensor]:
    """All loss terms plus the weighted total, as scalar tensors."""
    cfg = config or LossConfig()
    _check_shapes(
        class_logits,
        skeleton_logits,
        class_labels,
        skeleton_labels,
        len(cfg.class_weights),
    )
    wce = weighted_cross_entropy(class_logits, class_labels, cfg.class_weights)
    dice = dice_loss_linear(class_logits, class_labels, cfg.dice_smooth)
    skel = skeleton_bce(skeleton_logits, skeleton_labels)
    total = wce + cfg.dice_weight * dice + cfg.skeleton_weight * skel
    return {"wce": wce, "dice": dice, "skeleton": skel, "total": total}


def composite_loss(
    class_logits: torch.Tensor,
    skeleton_logits: torch.Tensor,
    class_labels: torch.Tensor,
    skeleton_labels: torch.Tensor,
    config: LossConfig | None = None,
) -> torch.Tensor:
    """The scalar training loss (see module docstring for the formula)."""
    return loss_components(
        class_logits, skeleton_logits, class_labels, skeleton_labels, config
    )["total"]
