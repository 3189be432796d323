"""Neural building blocks shared by the toy denoiser and the frozen encoders."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos timestep embedding, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb.to(torch.float32)


class TimeEmbedding(nn.Module):
    """Sinusoidal encoding followed by a 2-layer MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.SiLU(), nn.Linear(dim * 2, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal_embedding(t, self.dim).to(next(self.parameters()).dtype))


class ResBlock(nn.Module):
    """GroupNorm conv residual block with an additive timestep shift."""

    def __init__(self, channels: int, time_dim: int, groups: int = 8):
        super().__init__()
        g = groups if channels % groups == 0 else 1
        self.norm1 = nn.GroupNorm(g, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels)
        self.norm2 = nn.GroupNorm(g, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class CrossAttention(nn.Module):
    """Spatial queries attending over condition tokens.

    Single-head by default so head-averaged diagnostics coincide with the
    per-head ones and the raw-score/softmax identity stays exact. When
    ``self.capture`` is set, the forward pass stores pre-softmax scores and
    post-softmax weights of shape (B, heads, HW, L).
    """

    def __init__(self, channels: int, cond_dim: int, heads: int = 1, groups: int = 8):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        g = groups if channels % groups == 0 else 1
        self.heads = heads
        self.head_dim = channels // heads
        self.norm = nn.GroupNorm(g, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(cond_dim, channels, bias=False)
        self.to_v = nn.Linear(cond_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        self.capture = False
        self.last_raw: torch.Tensor | None = None
        self.last_norm: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)  # (B, HW, C)
        q = self.to_q(tokens).reshape(b, h * w, self.heads, self.head_dim).transpose(1, 2)
        k = self.to_k(cond).reshape(b, -1, self.heads, self.head_dim).transpose(1, 2)
        v = self.to_v(cond).reshape(b, -1, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)  # (B, heads, HW, L)
        weights = scores.softmax(dim=-1)
        if self.capture:
            self.last_raw = scores.detach().clone()
            self.last_norm = weights.detach().clone()
        out = (weights @ v).transpose(1, 2).reshape(b, h * w, c)
        out = self.to_out(out)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class SelfAttention(nn.Module):
    """Token self-attention used inside the frozen toy encoders."""

    def __init__(self, dim: int, heads: int = 2, causal: bool = False):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.causal = causal
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.reshape(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = k.reshape(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = v.reshape(b, n, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if self.causal:
            mask = torch.full((n, n), float("-inf"), dtype=scores.dtype).triu(1)
            scores = scores + mask
        out = (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm attention + MLP block."""

    def __init__(self, dim: int, heads: int = 2, causal: bool = False, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads=heads, causal=causal)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))
