"""Cross-attention capture, grounding diagnostics and heatmap figures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import ExtractionConfig, extract_features_batch
from .conditioner import ConditionEmbedding
from .errors import ConfigError, ContractViolation
from .utils import frames_to_tensor


@dataclass
class AttentionRecord:
    """Per-token attention maps from one cross-attention block.

    ``head`` is an index for per-head records or None for the head mean.
    ``map_norm`` holds post-softmax mass per query location; ``map_raw``
    the pre-softmax scores.
    """

    block_id: str
    head: int | None
    token_index: int
    token_label: str
    map_norm: np.ndarray
    map_raw: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        if self.map_norm.shape != self.map_raw.shape:
            raise ContractViolation("raw/norm map shapes differ")
        if np.any(self.map_norm < -1e-8) or np.any(self.map_norm > 1.0 + 1e-6):
            raise ContractViolation("normalized attention outside [0,1]")
        if not np.all(np.isfinite(self.map_raw)):
            raise ContractViolation("non-finite raw attention scores")


def capture(backend, image: np.ndarray, condition: ConditionEmbedding,
            block_ids: tuple[str, ...] = ("mid",), config: ExtractionConfig | None = None,
            per_head: bool = False, frame_index: int = 0) -> list[AttentionRecord]:
    """One hooked forward pass; per-token raw and normalized maps per block.

    Head-averaged by default (the toy denoiser is single-head, so the mean
    coincides with the only head); ``per_head`` records every head
    separately. Backend parameters are untouched.
    """
    unet = getattr(backend, "unet", None)
    if unet is None or not hasattr(unet, "capture_attention"):
        raise ConfigError(
            f"backend {backend.descriptor.backend_id!r} does not support attention capture")
    if config is None:
        config = ExtractionConfig(tap_points=tuple(block_ids), schedule=backend.schedule)
    frames = frames_to_tensor(image)
    records: list[AttentionRecord] = []
    with torch.no_grad(), unet.capture_attention(tuple(block_ids)) as store:
        extract_features_batch(backend, frames, condition.tokens.unsqueeze(0),
                               _with_taps(config, block_ids))
        for block_id in block_ids:
            raw, norm = store.get(block_id)  # (1, heads, HW, L)
            _, n_heads, hw, n_tokens = raw.shape
            if n_tokens != len(condition):
                raise ContractViolation("attention width != condition length")
            h, w = _square_shape(backend, block_id, hw)
            heads = list(range(n_heads)) if per_head else [None]
            for head in heads:
                if head is None:
                    raw_hw = raw[0].mean(dim=0)
                    norm_hw = norm[0].mean(dim=0)
                else:
                    raw_hw = raw[0, head]
                    norm_hw = norm[0, head]
                for tok in range(n_tokens):
                    records.append(AttentionRecord(
                        block_id=block_id, head=head, token_index=tok,
                        token_label=condition.token_labels[tok],
                        map_norm=norm_hw[:, tok].reshape(h, w).numpy().copy(),
                        map_raw=raw_hw[:, tok].reshape(h, w).numpy().copy(),
                        frame_index=frame_index))
    return records


def _with_taps(config: ExtractionConfig, block_ids) -> ExtractionConfig:
    taps = tuple(dict.fromkeys(tuple(config.tap_points) + tuple(block_ids)))
    return ExtractionConfig(tap_points=taps, timestep=config.timestep,
                            eps_seed=config.eps_seed, schedule=config.schedule)


def _square_shape(backend, block_id: str, hw: int) -> tuple[int, int]:
    shapes = backend.descriptor.tap_shapes
    if block_id in shapes:
        _, h, w = shapes[block_id]
        if h * w == hw:
            return h, w
    side = int(round(hw ** 0.5))
    if side * side != hw:
        raise ContractViolation(f"cannot infer spatial shape for {hw} queries")
    return side, side


def grounding_score(record: AttentionRecord, mask: np.ndarray) -> float:
    """Fraction of the token's normalized attention mass inside the mask."""
    mask = np.asarray(mask)
    if mask.shape != record.map_norm.shape:
        raise ContractViolation(
            f"mask shape {mask.shape} != map shape {record.map_norm.shape}")
    total = float(record.map_norm.sum())
    if total <= 0.0:
        return 0.0
    return float((record.map_norm * (mask > 0)).sum() / total)


def downsample_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-area reduction of a full-resolution binary mask to a tap grid."""
    h, w = shape
    mh, mw = mask.shape
    if mh % h or mw % w:
        raise ContractViolation(f"mask {mask.shape} not divisible into {(h, w)}")
    blocks = mask.reshape(h, mh // h, w, mw // w).astype(np.float64)
    return blocks.mean(axis=(1, 3)) > 0.25


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _safe_token(label: str) -> str:
    return "".join(c for c in label if c.isalnum() or c in "_-") or "tok"


def emit_heatmaps(records: list[AttentionRecord], frames, out_dir: Path | str,
                  env_id: str = "env", variant: str = "variant",
                  grounding: dict[tuple[int, str], float] | None = None) -> list[Path]:
    """One overlay per (block, token, frame) plus a contact sheet per block.

    Maps are min-max scaled per figure with the scale printed in the margin;
    filenames are deterministic and re-runs are byte-identical.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    written: list[Path] = []

    for rec in records:
        frame = frames[rec.frame_index]
        lo, hi = float(rec.map_norm.min()), float(rec.map_norm.max())
        scaled = (rec.map_norm - lo) / (hi - lo) if hi > lo else np.zeros_like(rec.map_norm)
        fig, ax = plt.subplots(figsize=(2.6, 2.9))
        ax.imshow(frame, extent=(0, 1, 1, 0))
        ax.imshow(scaled, cmap="inferno", alpha=0.55, extent=(0, 1, 1, 0),
                  interpolation="nearest", vmin=0.0, vmax=1.0)
        ax.set_axis_off()
        head_tag = "" if rec.head is None else f" h{rec.head}"
        ax.set_title(f"{rec.block_id} {rec.token_label}{head_tag}", fontsize=8)
        fig.text(0.5, 0.02, f"scale: [{lo:.2e}, {hi:.2e}]", ha="center", fontsize=6)
        name = (f"{env_id}_{variant}_{rec.block_id}_{_safe_token(rec.token_label)}"
                f"_{rec.frame_index}.png")
        path = out_dir / name
        fig.savefig(path, dpi=110, metadata={"Software": None})
        plt.close(fig)
        written.append(path)

    for block_id in dict.fromkeys(r.block_id for r in records):
        block_recs = [r for r in records
                      if r.block_id == block_id and (r.head is None or r.head == 0)]
        labels = list(dict.fromkeys(r.token_label for r in block_recs))
        frame_ids = sorted(dict.fromkeys(r.frame_index for r in block_recs))
        fig, axes = plt.subplots(len(labels), len(frame_ids),
                                 figsize=(1.6 * len(frame_ids) + 0.8, 1.6 * len(labels)),
                                 squeeze=False)
        for i, label in enumerate(labels):
            for j, fidx in enumerate(frame_ids):
                ax = axes[i][j]
                rec = next(r for r in block_recs
                           if r.token_label == label and r.frame_index == fidx)
                lo, hi = float(rec.map_norm.min()), float(rec.map_norm.max())
                scaled = (rec.map_norm - lo) / (hi - lo) if hi > lo else np.zeros_like(rec.map_norm)
                ax.imshow(frames[fidx], extent=(0, 1, 1, 0))
                ax.imshow(scaled, cmap="inferno", alpha=0.55, extent=(0, 1, 1, 0),
                          interpolation="nearest", vmin=0.0, vmax=1.0)
                ax.set_axis_off()
                if j == 0:
                    ax.set_title(label, fontsize=7, loc="left")
        fig.tight_layout()
        sheet = out_dir / f"{env_id}_{variant}_{block_id}_contact_sheet.png"
        fig.savefig(sheet, dpi=110, metadata={"Software": None})
        plt.close(fig)
        written.append(sheet)

    if grounding is not None:
        payload = {f"frame{fidx}/{label}": score
                   for (fidx, label), score in sorted(grounding.items())}
        sidecar = out_dir / f"{env_id}_{variant}_grounding.json"
        sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True))
        written.append(sidecar)
    return written
