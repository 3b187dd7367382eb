"""Training loop: AdamW + cosine schedule, early stopping on validation F1.

Optimization follows a fixed recipe: AdamW at learning rate 0.001 with the
rate cosine-annealed to zero over the step budget.  Every ``log_every``
steps the mean training loss and the validation F1 of the linear class
(pixel-wise, pooled over the whole validation split) are appended to a JSON
log, the best-scoring checkpoint is kept, and training stops early once the
validation F1 has not improved by at least ``early_stop_min_delta`` for
``early_stop_epochs`` epochs' worth of steps.  A non-finite loss aborts
immediately with a diagnostic rather than training onward from garbage.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import torch
from torch.utils.data import DataLoader

from nnsep.data import DIST_NORM, load_manifest, make_loaders, split_records
from nnsep.loss import LossConfig, composite_loss
from nnsep.model import ModelConfig, SeparatorNet

__all__ = ["TrainConfig", "train", "validation_f1", "load_checkpoint"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters and stopping rules."""

    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    max_steps: int = 3000
    val_fraction: float = 0.2
    log_every: int = 50
    early_stop_min_delta: float = 0.01
    early_stop_epochs: int = 2
    stop_at_f1: float | None = None
    seed: int = 0
    augment: bool = True
    device: str = "cpu"
    num_workers: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError(
                f"val_fraction must lie in (0, 1), got {self.val_fraction}"
            )
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.early_stop_min_delta < 0:
            raise ValueError(
                f"early_stop_min_delta must be >= 0, got {self.early_stop_min_delta}"
            )
        if self.early_stop_epochs < 1:
            raise ValueError(
                f"early_stop_epochs must be >= 1, got {self.early_stop_epochs}"
            )
        if self.stop_at_f1 is not None and not (0.0 < self.stop_at_f1 <= 1.0):
            raise ValueError(f"stop_at_f1 must lie in (0, 1], got {self.stop_at_f1}")


def validation_f1(
    model: SeparatorNet, loader: DataLoader, device: str = "cpu"
) -> float:
    """Pixel F1 of the linear class, pooled over the whole loader."""
    was_training = model.training
    model.eval()
    tp = fp = fn = 0
    with torch.no_grad():
        for x, y, _ in loader:
            class_logits, _ = model(x.to(device))
            pred = class_logits.argmax(dim=1).cpu()
            pred_pos = pred == 1
            true_pos = y == 1
            tp += int((pred_pos & true_pos).sum())
            fp += int((pred_pos & ~true_pos).sum())
            fn += int((~pred_pos & true_pos).sum())
    if was_training:
        model.train()
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def _save_checkpoint(
    path: str, model: SeparatorNet, step: int, val_f1: float
) -> None:
    torch.save(
        {
            "model_config": model.config.to_dict(),
            "model_state": model.state_dict(),
            "dist_norm": DIST_NORM,
            "step": step,
            "val_f1_linear": val_f1,
        },
        path,
    )


def load_checkpoint(path, device: str = "cpu") -> tuple[SeparatorNet, dict]:
    """Rebuild the model from a checkpoint; returns ``(model, metadata)``."""
    doc = torch.load(str(path), map_location=device, weights_only=True)
    model = SeparatorNet(ModelConfig.from_dict(doc["model_config"]))
    model.load_state_dict(doc["model_state"])
    model.to(device)
    model.eval()
    meta = {k: doc[k] for k in ("dist_norm", "step", "val_f1_linear")}
    return model, meta


def train(
    manifest_path,
    out_dir,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    loss_config: LossConfig | None = None,
) -> dict:
    """Train on a scene manifest; writes ``checkpoint.pt`` and ``train_log.jsonl``.

    Returns a summary with the best validation F1, the step it occurred at,
    the steps actually run, and why training stopped (``max_steps``,
    ``early_stop``, or ``target_reached``).
    """
    model_cfg = model_config or ModelConfig()
    cfg = train_config or TrainConfig()
    loss_cfg = loss_config or LossConfig()
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "checkpoint.pt")
    log_path = os.path.join(out_dir, "train_log.jsonl")

    torch.manual_seed(cfg.seed)
    records = load_manifest(manifest_path)
    train_recs, val_recs = split_records(records, cfg.val_fraction)
    train_loader, val_loader, train_ds = make_loaders(
        train_recs,
        val_recs,
        cfg.batch_size,
        seed=cfg.seed,
        augment=cfg.augment,
        num_workers=cfg.num_workers,
    )
    steps_per_epoch = max(1, len(train_loader))

    model = SeparatorNet(model_cfg).to(cfg.device)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=cfg.max_steps, eta_min=0.0
    )

    patience_steps = cfg.early_stop_epochs * steps_per_epoch
    best_f1 = -1.0
    best_step = 0
    last_improve_step = 0
    stop_reason = "max_steps"
    step = 0
    epoch = 0
    window: list[float] = []
    with open(log_path, "w", encoding="ascii") as log_file:
        while step < cfg.max_steps and stop_reason == "max_steps":
            train_ds.set_epoch(epoch)
            for x, y, s in train_loader:
                step += 1
                optimizer.zero_grad()
                class_logits, skel_logits = model(x.to(cfg.device))
                loss = composite_loss(
                    class_logits,
                    skel_logits,
                    y.to(cfg.device),
                    s.to(cfg.device),
                    loss_cfg,
                )
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"training aborted: non-finite loss {loss.item()} at "
                        f"step {step} (epoch {epoch}); check learning rate "
                        f"and input data"
                    )
                loss.backward()
                optimizer.step()
                scheduler.step()
                window.append(float(loss.item()))

                if step % cfg.log_every == 0 or step == cfg.max_steps:
                    f1 = validation_f1(model, val_loader, cfg.device)
                    record = {
                        "step": step,
                        "loss": sum(window) / len(window),
                        "val_f1_linear": f1,
                    }
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                    log_file.flush()
                    window.clear()
                    if f1 > best_f1:
                        if f1 >= best_f1 + cfg.early_stop_min_delta:
                            last_improve_step = step
                        best_f1 = f1
                        best_step = step
                        _save_checkpoint(checkpoint_path, model, step, f1)
                    if cfg.stop_at_f1 is not None and f1 >= cfg.stop_at_f1:
                        stop_reason = "target_reached"
                        break
                    if step - last_improve_step >= patience_steps:
                        stop_reason = "early_stop"
                        break
                if step >= cfg.max_steps:
                    break
            epoch += 1

    if best_f1 < 0:
        # No validation pass happened (max_steps < log_every); checkpoint the
        # final state so the run still yields a usable model.
        best_f1 = validation_f1(model, val_loader, cfg.device)
        best_step = step
        _save_checkpoint(checkpoint_path, model, step, best_f1)

    return {
        "best_val_f1_linear": best_f1,
        "best_step": best_step,
        "steps_run": step,
        "epochs_run": epoch,
        "stop_reason": stop_reason,
        "checkpoint": checkpoint_path,
        "log": log_path,
    }
