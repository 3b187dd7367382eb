"""Encoder-decoder network for chip separation.

A U-Net over three input channels (mask, skeleton, normalized distance
transform):

* encoder: five pre-activation double-conv residual stages; the first keeps
  full resolution, each later stage halves it, for an overall stride of 16;
* bottleneck: atrous spatial pyramid pooling with a 1x1 branch, 3x3 branches
  at dilation rates 3, 6, 9 and 12, and a global-average-pooling branch,
  projected back to the deepest encoder width (512 at the default base
  width of 32);
* decoder: four transposed-conv upsampling steps with skip connections from
  the matching encoder stages;
* two heads at input resolution: 3-channel class logits (background, linear,
  non-linear) and 1-channel skeleton logits.

Spatial output always equals spatial input; forward requires height and
width divisible by 16 (pad-and-crop callers handle ragged chips).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

__all__ = ["ModelConfig", "SeparatorNet", "STRIDE"]

#: overall downsampling factor of the encoder
STRIDE = 16

_NUM_STAGES = 5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``base_width`` scales every layer; stage widths are
    ``base_width * (1, 2, 4, 8, 16)``, so the default 32 yields a 512-map
    bottleneck.  Smaller bases (e.g. 8) give CPU-friendly toy models with
    the same topology.
    """

    input_channels: int = 3
    num_classes: int = 3
    base_width: int = 32
    aspp_rates: tuple[int, ...] = (3, 6, 9, 12)

    def __post_init__(self):
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        rates = tuple(int(r) for r in self.aspp_rates)
        if not rates or any(r < 1 for r in rates) or len(set(rates)) != len(rates):
            raise ValueError(
                f"aspp_rates must be distinct positive integers, got {self.aspp_rates}"
            )
        object.__setattr__(self, "aspp_rates", rates)

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * (1 << i) for i in range(_NUM_STAGES))

    @property
    def bottleneck_width(self) -> int:
        return self.stage_widths[-1]

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "base_width": self.base_width,
            "aspp_rates": list(self.aspp_rates),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            input_channels=int(doc["input_channels"]),
            num_classes=int(doc["num_classes"]),
            base_width=int(doc["base_width"]),
            aspp_rates=tuple(int(r) for r in doc["aspp_rates"]),
        )


class ResidualBlock(nn.Module):
    """Pre-activation double-conv residual block.

    ``y = conv(act(norm(conv(act(norm(x)))))) + shortcut(x)``; the shortcut
    is the identity when shape is preserved, else a strided 1x1 projection.
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.act = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.shortcut(x)


class ASPP(nn.Module):
    """Atrous spatial pyramid pooling with a global-average branch."""

    def __init__(self, channels: int, rates: tuple[int, ...]):
        super().__init__()
        self.rates = rates

        def branch(kernel: int, dilation: int = 1) -> nn.Sequential:
            padding = 0 if kernel == 1 else dilation
            return nn.Sequential(
                nn.Conv2d(
                    channels,
                    channels,
                    kernel,
                    padding=padding,
                    dilation=dilation,
                    bias=False,
                ),
                nn.BatchNorm2d(channels),
                nn.ReLU(inplace=True),
            )

        self.branches = nn.ModuleList(
            [branch(1)] + [branch(3, dilation=r) for r in rates]
        )
        self.pool_branch = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(channels, channels, 1, bias=False),
            nn.ReLU(inplace=True),
        )
        n_branches = len(self.branches) + 1
        self.project = nn.Sequential(
            nn.Conv2d(n_branches * channels, channels, 1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [b(x) for b in self.branches]
        pooled = self.pool_branch(x)
        feats.append(pooled.expand(-1, -1, x.shape[-2], x.shape[-1]))
        return self.project(torch.cat(feats, dim=1))


class DecoderStage(nn.Module):
    """Transposed-conv upsample, skip concatenation, residual refinement."""

    def __init__(self, in_ch: int, skip_ch: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_ch, skip_ch, 2, stride=2)
        self.block = ResidualBlock(2 * skip_ch, skip_ch)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.block(torch.cat([self.up(x), skip], dim=1))


class SeparatorNet(nn.Module):
    """Full network; ``forward`` returns ``(class_logits, skeleton_logits)``."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        widths = self.config.stage_widths
        ins = (self.config.input_channels,) + widths[:-1]
        strides = (1,) + (2,) * (_NUM_STAGES - 1)
        self.encoder = nn.ModuleList(
            ResidualBlock(i, o, stride=s) for i, o, s in zip(ins, widths, strides)
        )
        self.aspp = ASPP(widths[-1], self.config.aspp_rates)
        self.decoder = nn.ModuleList(
            DecoderStage(widths[i + 1], widths[i])
            for i in reversed(range(_NUM_STAGES - 1))
        )
        self.class_head = nn.Conv2d(widths[0], self.config.num_classes, 1)
        self.skeleton_head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected input of shape (B, {self.config.input_channels}, H, W), "
                f"got {tuple(x.shape)}"
            )
        h, w = x.shape[-2], x.shape[-1]
        if h % STRIDE or w % STRIDE:
            raise ValueError(
                f"spatial dims must be divisible by {STRIDE}, got {h}x{w}"
            )
        skips = []
        feat = x
        for stage in self.encoder:
            feat = stage(feat)
            skips.append(feat)
        feat = self.aspp(feat)
        for stage, skip in zip(self.decoder, reversed(skips[:-1])):
            feat = stage(feat, skip)
        return self.class_head(feat), self.skeleton_head(feat)
