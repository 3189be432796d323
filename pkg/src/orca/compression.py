"""Compression heads: tapped 2-D feature maps -> flat state vectors.

Each tap point gets its own 3x3 convolution into ``compress_dim`` channels,
batch normalization over those channels, ReLU and a row-major flatten.
Fusing concatenates the per-tap vectors in tap order, giving a policy input
of length sum_i compress_dim * H_i * W_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import FeatureBundle
from .errors import ConfigError, ContractViolation
from .utils import seeded_init

DEFAULT_COMPRESS_DIM = 48


@dataclass(frozen=True)
class CompressionConfig:
    compress_dim: int = DEFAULT_COMPRESS_DIM
    tap_points: tuple[str, ...] = ("down_1", "down_2", "down_3", "mid")

    def __post_init__(self):
        if self.compress_dim <= 0:
            raise ConfigError("compress_dim must be positive")


class CompressionHead(nn.Module):
    """conv3x3 -> batchnorm -> relu -> flatten for one tap point."""

    def __init__(self, in_channels: int, compress_dim: int):
        super().__init__()
        self.in_channels = in_channels
        self.layers = nn.Sequential(
            nn.Conv2d(in_channels, compress_dim, kernel_size=3, padding=1),
            nn.BatchNorm2d(compress_dim),
            nn.ReLU(inplace=True),
            nn.Flatten(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != self.in_channels:
            raise ContractViolation(
                f"feature has {x.shape[1]} channels, head expects {self.in_channels}")
        out = self.layers(x)
        return out.squeeze(0) if squeeze else out


class CompressionBank(nn.Module):
    """One compression head per configured tap point."""

    def __init__(self, config: CompressionConfig, tap_shapes: dict[str, tuple[int, int, int]],
                 seed: int = 0):
        super().__init__()
        self.config = config
        missing = [t for t in config.tap_points if t not in tap_shapes]
        if missing:
            raise ConfigError(f"no feature shape declared for taps {missing}")
        with seeded_init(seed):
            self.heads = nn.ModuleDict({
                tap: CompressionHead(tap_shapes[tap][0], config.compress_dim)
                for tap in config.tap_points
            })
        self.fused_length = sum(
            config.compress_dim * tap_shapes[t][1] * tap_shapes[t][2]
            for t in config.tap_points)

    def compress(self, tap: str, feature_map: torch.Tensor) -> torch.Tensor:
        """Flat non-negative vector for one tapped map."""
        if tap not in self.heads:
            raise ConfigError(f"no compression head for tap {tap!r}")
        return self.heads[tap](feature_map)

    def fuse_features(self, features: dict[str, torch.Tensor]) -> torch.Tensor:
        """Compress each configured tap and concatenate in tap order (batched)."""
        parts = []
        for tap in self.config.tap_points:
            if tap not in features:
                raise ConfigError(f"bundle missing tap {tap!r}")
            parts.append(self.heads[tap](features[tap]))
        return torch.cat(parts, dim=-1)


def compress(feature_map: torch.Tensor, head: CompressionHead) -> torch.Tensor:
    """Single-map compression, (C,H,W) -> vector of length compress_dim*H*W."""
    return head(feature_map)


def fuse(bundle: FeatureBundle, bank: CompressionBank) -> torch.Tensor:
    """Compress every map in a bundle and concatenate in the bundle's tap order."""
    missing = [bid for bid, _ in bundle.entries if bid not in bank.heads]
    if missing:
        raise ConfigError(f"no compression head for taps {missing}")
    return torch.cat([bank.heads[bid](fmap) for bid, fmap in bundle.entries], dim=-1)
