"""Frozen conditional denoiser backends and intermediate feature extraction.

The default backend is a small pixel-space conditional U-Net (3 down blocks,
a bottleneck, 3 up blocks, cross-attention in every block) on 64x64 frames.
Heavier latent-diffusion backends plug in through ``register_backend``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioner import ConditionEmbedding
from .errors import BackendLookupError, ConfigError, ContractViolation
from .nets import CrossAttention, ResBlock, TimeEmbedding
from .schedule import LatentTensor, NoiseSchedule, make_linear_schedule, noise_batch
from .utils import derive_seed, frames_to_tensor, freeze_module, seeded_init

TOY_BACKBONE_SEED = 5511893


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    tap_points: tuple[str, ...]
    latent_shape: tuple[int, int, int]
    condition_dim: int
    max_condition_len: int
    # (C,H,W) of each tapped feature map, needed to size compression heads
    tap_shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tap_points:
            raise ContractViolation("tap_points must be non-empty")
        if self.condition_dim <= 0:
            raise ContractViolation("condition_dim must be positive")


@dataclass
class FeatureBundle:
    """Ordered per-block feature maps from one denoiser pass."""

    entries: list[tuple[str, torch.Tensor]]
    timestep: int
    backend_id: str

    def __post_init__(self):
        ids = [bid for bid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate block ids in bundle: {ids}")

    def block_ids(self) -> list[str]:
        return [bid for bid, _ in self.entries]

    def feature(self, block_id: str) -> torch.Tensor:
        for bid, fmap in self.entries:
            if bid == block_id:
                return fmap
        raise KeyError(block_id)


@dataclass
class ExtractionConfig:
    """How to run the frozen denoiser for feature taps.

    ``eps_seed`` scopes the noise stream for t>0: the n-th extraction call
    under one config draws the same eps as the n-th call under any config
    with the same seed.
    """

    tap_points: tuple[str, ...] = ("down_1", "down_2", "down_3", "mid")
    timestep: int = 0
    eps_seed: int = 0
    schedule: NoiseSchedule = field(default_factory=make_linear_schedule)
    _calls: int = field(default=0, repr=False)

    def next_eps(self, shape: tuple[int, ...], dtype: torch.dtype) -> torch.Tensor:
        gen = torch.Generator().manual_seed(derive_seed("eps", self.eps_seed, self._calls))
        self._calls += 1
        return torch.randn(shape, generator=gen, dtype=torch.float32).to(dtype)


# ---------------------------------------------------------------------------
# Toy conditional U-Net
# ---------------------------------------------------------------------------


class _DownBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, time_dim: int, heads: int):
        super().__init__()
        self.down = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.res = ResBlock(out_ch, time_dim)
        self.attn = CrossAttention(out_ch, cond_dim, heads=heads)

    def forward(self, x, temb, cond):
        x = self.down(x)
        x = self.res(x, temb)
        return self.attn(x, cond)


class _UpBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, cond_dim: int,
                 time_dim: int, heads: int):
        super().__init__()
        self.fuse = nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1)
        self.res = ResBlock(out_ch, time_dim)
        self.attn = CrossAttention(out_ch, cond_dim, heads=heads)

    def forward(self, x, skip, temb, cond):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.fuse(torch.cat([x, skip], dim=1))
        x = self.res(x, temb)
        return self.attn(x, cond)


class CaptureStore:
    """Read access to the attention maps recorded during one captured pass."""

    def __init__(self, modules: dict[str, CrossAttention]):
        self._modules = modules

    def get(self, block_id: str) -> tuple[torch.Tensor, torch.Tensor]:
        """(raw_scores, softmax_weights), each (B, heads, HW, L)."""
        mod = self._modules[block_id]
        if mod.last_raw is None or mod.last_norm is None:
            raise RuntimeError(f"no attention recorded for block {block_id!r}")
        return mod.last_raw, mod.last_norm


class ToyUNet(nn.Module):
    """Conditional denoiser with a tap point at every block output.

    Each down block halves the spatial size, and the bottleneck halves it
    once more, so a 64x64 input yields taps at 32/16/8/4 px. Up blocks
    mirror the down path with skip connections.
    """

    def __init__(self, image_size: int = 64, levels: int = 3, base: int = 8,
                 cond_dim: int = 32, heads: int = 1, seed: int = TOY_BACKBONE_SEED):
        super().__init__()
        if image_size % (2 ** (levels + 1)) != 0:
            raise ConfigError(
                f"image_size {image_size} not divisible by {2 ** (levels + 1)}")
        self.image_size = image_size
        self.levels = levels
        self.cond_dim = cond_dim
        time_dim = base * 4
        down_widths = [base * (i + 2) for i in range(levels)]
        mid_width = base * (levels + 3)
        with seeded_init(seed):
            self.time_emb = TimeEmbedding(time_dim)
            self.stem = nn.Conv2d(3, base, 3, padding=1)
            self.downs = nn.ModuleList()
            in_ch = base
            for w in down_widths:
                self.downs.append(_DownBlock(in_ch, w, cond_dim, time_dim, heads))
                in_ch = w
            self.mid = _DownBlock(in_ch, mid_width, cond_dim, time_dim, heads)
            self.ups = nn.ModuleList()
            in_ch = mid_width
            for skip_w in reversed(down_widths):
                self.ups.append(_UpBlock(in_ch, skip_w, skip_w, cond_dim, time_dim, heads))
                in_ch = skip_w
            self.head = nn.Conv2d(in_ch + base, 3, 3, padding=1)

        self.tap_points = tuple(
            [f"down_{i + 1}" for i in range(levels)] + ["mid"]
            + [f"up_{i}" for i in range(levels)])
        self.tap_shapes = {}
        size = image_size
        for i, w in enumerate(down_widths):
            size //= 2
            self.tap_shapes[f"down_{i + 1}"] = (w, size, size)
        size //= 2
        self.tap_shapes["mid"] = (mid_width, size, size)
        for i, skip_w in enumerate(reversed(down_widths)):
            size *= 2
            self.tap_shapes[f"up_{i}"] = (skip_w, size, size)

    def _attn_modules(self) -> dict[str, CrossAttention]:
        out = {}
        for i, blk in enumerate(self.downs):
            out[f"down_{i + 1}"] = blk.attn
        out["mid"] = self.mid.attn
        for i, blk in enumerate(self.ups):
            out[f"up_{i}"] = blk.attn
        return out

    @contextlib.contextmanager
    def capture_attention(self, block_ids: tuple[str, ...]):
        mods = self._attn_modules()
        unknown = [b for b in block_ids if b not in mods]
        if unknown:
            raise ConfigError(f"blocks without cross-attention: {unknown}")
        chosen = {b: mods[b] for b in block_ids}
        try:
            for mod in chosen.values():
                mod.capture = True
            yield CaptureStore(chosen)
        finally:
            for mod in chosen.values():
                mod.capture = False
                mod.last_raw = None
                mod.last_norm = None

    def forward(self, z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                taps: tuple[str, ...] = (), predict_noise: bool = False):
        """Run the denoiser, returning ({block_id: feature}, eps_prediction|None).

        The up path and output head only run when a requested tap or the
        noise prediction needs them.
        """
        if cond.ndim == 2:
            cond = cond.unsqueeze(0).expand(z.shape[0], -1, -1)
        if cond.shape[-1] != self.cond_dim:
            raise ContractViolation(
                f"condition width {cond.shape[-1]} != condition_dim {self.cond_dim}")
        unknown = [b for b in taps if b not in self.tap_points]
        if unknown:
            raise ConfigError(f"unknown tap points {unknown}; available: {list(self.tap_points)}")
        if t.ndim == 0:
            t = t.expand(z.shape[0])
        temb = self.time_emb(t).to(z.dtype)

        features: dict[str, torch.Tensor] = {}
        stem = self.stem(z)
        x = stem
        skips = []
        for i, blk in enumerate(self.downs):
            x = blk(x, temb, cond)
            skips.append(x)
            features[f"down_{i + 1}"] = x
        x = self.mid(x, temb, cond)
        features["mid"] = x

        need_ups = predict_noise or any(b.startswith("up_") for b in taps)
        eps_pred = None
        if need_ups:
            for i, blk in enumerate(self.ups):
                x = blk(x, skips[-(i + 1)], temb, cond)
                features[f"up_{i}"] = x
            if predict_noise:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
                eps_pred = self.head(torch.cat([x, stem], dim=1))
        return {b: features[b] for b in taps}, eps_pred


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class ToyBackend:
    """Pixel-space backend: identity encoder plus the frozen toy U-Net."""

    def __init__(self, image_size: int = 64, levels: int = 3, base: int = 8,
                 cond_dim: int = 32, heads: int = 1, checkpoint_path: str = "",
                 seed: int = TOY_BACKBONE_SEED, backend_id: str = "toy"):
        self.unet = ToyUNet(image_size, levels=levels, base=base,
                            cond_dim=cond_dim, heads=heads, seed=seed)
        if checkpoint_path:
            state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
            self.unet.load_state_dict(state)
        freeze_module(self.unet)
        self.schedule = make_linear_schedule()
        self.descriptor = BackendDescriptor(
            backend_id=backend_id,
            tap_points=self.unet.tap_points,
            latent_shape=(3, image_size, image_size),
            condition_dim=cond_dim,
            max_condition_len=77,
            tap_shapes=dict(self.unet.tap_shapes),
        )

    def to(self, dtype: torch.dtype) -> "ToyBackend":
        self.unet.to(dtype)
        return self

    def encode(self, image: np.ndarray | torch.Tensor) -> LatentTensor:
        """Identity encoder: [0,1] frame -> [-1,1] pixel-space latent."""
        if isinstance(image, np.ndarray):
            image = frames_to_tensor(image)[0]
        return LatentTensor(values=image * 2.0 - 1.0, space_tag="pixel")

    def encode_batch(self, frames: torch.Tensor) -> torch.Tensor:
        return frames * 2.0 - 1.0

    def denoise_batch(self, z_t: torch.Tensor, t: int, cond: torch.Tensor,
                      taps: tuple[str, ...]) -> dict[str, torch.Tensor]:
        t_tensor = torch.tensor(t, dtype=torch.long)
        features, _ = self.unet(z_t, t_tensor, cond, taps=taps)
        return features

    def denoise(self, z_t: LatentTensor, t: int,
                condition: ConditionEmbedding) -> FeatureBundle:
        """Single-latent denoiser pass over all tap points (plugin contract)."""
        feats = self.denoise_batch(z_t.values.unsqueeze(0), t, condition.tokens.unsqueeze(0),
                                   taps=self.descriptor.tap_points)
        entries = [(bid, feats[bid][0]) for bid in self.descriptor.tap_points]
        return FeatureBundle(entries=entries, timestep=t,
                             backend_id=self.descriptor.backend_id)


_REGISTRY: dict[str, dict] = {}


def register_backend(backend_id: str, factory, tap_points: tuple[str, ...]) -> None:
    """Register a backend plugin.

    ``factory(checkpoint_path: str)`` must return an object exposing
    ``descriptor``, ``encode`` and ``denoise`` per the backend contract.
    Registration happens once at startup; entries are never mutated.
    """
    if backend_id in _REGISTRY:
        raise ConfigError(f"backend {backend_id!r} already registered")
    _REGISTRY[backend_id] = {"factory": factory, "tap_points": tuple(tap_points)}


def create_backend(backend_id: str, checkpoint_path: str = ""):
    if backend_id not in _REGISTRY:
        raise BackendLookupError(backend_id)
    return _REGISTRY[backend_id]["factory"](checkpoint_path)


def list_tap_points(backend_id: str) -> list[str]:
    """The backend's published tap points, stable across calls."""
    if backend_id not in _REGISTRY:
        raise BackendLookupError(backend_id)
    return list(_REGISTRY[backend_id]["tap_points"])


register_backend(
    "toy",
    lambda checkpoint_path="": ToyBackend(checkpoint_path=checkpoint_path),
    tap_points=("down_1", "down_2", "down_3", "mid", "up_0", "up_1", "up_2"),
)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _validate_extraction(backend, condition_tokens: torch.Tensor, config: ExtractionConfig):
    desc = backend.descriptor
    unknown = [b for b in config.tap_points if b not in desc.tap_points]
    if unknown:
        raise ConfigError(f"unknown tap points {unknown} for backend {desc.backend_id!r}")
    if condition_tokens.shape[-1] != desc.condition_dim:
        raise ContractViolation(
            f"condition width {condition_tokens.shape[-1]} != {desc.condition_dim}")
    if condition_tokens.shape[-2] > desc.max_condition_len:
        raise ContractViolation("condition longer than max_condition_len")
    if not 0 <= config.timestep <= backend.schedule.num_timesteps:
        raise IndexError(f"timestep {config.timestep} out of range")


def extract_features_batch(backend, frames: torch.Tensor, cond: torch.Tensor,
                           config: ExtractionConfig) -> dict[str, torch.Tensor]:
    """Batched tap extraction: encode, noise (t>0), one frozen denoiser pass.

    Gradients flow back into the condition tokens but never into backend
    parameters (they are requires_grad=False).
    """
    _validate_extraction(backend, cond, config)
    z0 = backend.encode_batch(frames)
    if config.timestep > 0:
        eps = config.next_eps(tuple(z0.shape), z0.dtype)
        t_idx = torch.full((z0.shape[0],), config.timestep, dtype=torch.long)
        z_t = noise_batch(z0, t_idx, eps, backend.schedule)
    else:
        z_t = z0
    return backend.denoise_batch(z_t, config.timestep, cond, taps=tuple(config.tap_points))


def extract_features(backend, image: np.ndarray, condition: ConditionEmbedding,
                     config: ExtractionConfig) -> FeatureBundle:
    """Extract tapped feature maps for one observation, in requested order."""
    frames = frames_to_tensor(image, dtype=condition.tokens.dtype)
    feats = extract_features_batch(backend, frames, condition.tokens.unsqueeze(0), config)
    entries = [(bid, feats[bid][0]) for bid in config.tap_points]
    return FeatureBundle(entries=entries, timestep=config.timestep,
                         backend_id=backend.descriptor.backend_id)


# ---------------------------------------------------------------------------
# Denoising pre-training fixture (not a deliverable surface)
# ---------------------------------------------------------------------------


def pretrain_denoiser(backend: ToyBackend, frames: np.ndarray, condition_fn,
                      steps: int = 400, batch_size: int = 16, lr: float = 1e-3,
                      seed: int = 0) -> list[float]:
    """Short eps-regression pass over environment frames.

    ``condition_fn(batch_frames_tensor) -> (B,L,D) tokens`` supplies the
    conditioning signal; correlating it with the frames keeps the
    cross-attention pathway load-bearing. The backend is refrozen afterwards.
    """
    unet = backend.unet
    for p in unet.parameters():
        p.requires_grad_(True)
    unet.train()
    opt = torch.optim.Adam(unet.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    tensor_frames = frames_to_tensor(frames)
    schedule = backend.schedule
    losses = []
    for step in range(steps):
        idx = rng.choice(len(tensor_frames), size=min(batch_size, len(tensor_frames)),
                         replace=False)
        batch = tensor_frames[torch.from_numpy(idx)]
        z0 = backend.encode_batch(batch)
        t = torch.from_numpy(
            rng.integers(1, schedule.num_timesteps + 1, size=len(idx))).long()
        gen = torch.Generator().manual_seed(derive_seed("pretrain-eps", seed, step))
        eps = torch.randn(z0.shape, generator=gen)
        z_t = noise_batch(z0, t, eps, schedule)
        with torch.no_grad():
            cond = condition_fn(batch)
        _, eps_pred = unet(z_t, t, cond, taps=(), predict_noise=True)
        loss = F.mse_loss(eps_pred, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    freeze_module(unet)
    return losses
