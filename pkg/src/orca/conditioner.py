"""Condition embeddings for every conditioner variant.

Variants: null (bos+eos only), fixed text, learned-prefix (coop), and the
task + visual prompt combination (orca) with its task_only / visual_only
reductions. All sequences pass through the frozen causal text encoder as
[bos, <content>, eos]; gradients reach only the prompt bank.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import ToyTextEncoder, ToyVisionEncoder
from .errors import ConfigError, ContractViolation
from .utils import seeded_init

VARIANT_TAGS = ("null", "text", "coop", "orca", "task_only", "visual_only")


def load_captions() -> dict[str, dict[str, str]]:
    """Static caption table keyed by task name, with 'simple' and 'caption' forms."""
    with resources.files("orca").joinpath("captions.json").open() as fh:
        return json.load(fh)


@dataclass
class ConditionEmbedding:
    """Token embeddings fed to the denoiser's cross-attention."""

    tokens: torch.Tensor  # (L, condition_dim)
    variant_tag: str
    token_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.variant_tag not in VARIANT_TAGS:
            raise ContractViolation(f"unknown variant_tag {self.variant_tag!r}")
        if len(self.token_labels) != self.tokens.shape[0]:
            raise ContractViolation(
                f"{len(self.token_labels)} labels for {self.tokens.shape[0]} tokens")

    def __len__(self) -> int:
        return self.tokens.shape[0]


class PromptBank(nn.Module):
    """The trainable prompt parameters: task tokens plus the visual projector.

    One bank per training run; the same task-token tensor conditions every
    observation. Prefix length 4 doubles as the coop prefix.
    """

    def __init__(self, l_t: int = 4, l_v: int = 16, prompt_dim: int = 32,
                 visual_dim: int = 48, seed: int = 0, init_std: float = 0.02):
        super().__init__()
        if l_t < 0 or l_v < 0:
            raise ConfigError("prompt lengths must be non-negative")
        if l_v > 0:
            g = math.isqrt(l_v)
            if g * g != l_v:
                raise ConfigError(f"l_v={l_v} is not a perfect square")
            self.grid = g
        else:
            self.grid = 0
        self.l_t = l_t
        self.l_v = l_v
        with seeded_init(seed):
            self.task_tokens = nn.Parameter(torch.randn(max(l_t, 1), prompt_dim) * init_std)
            self.projector = nn.Conv2d(visual_dim, prompt_dim, kernel_size=1)
            nn.init.normal_(self.projector.weight, std=init_std)
            nn.init.zeros_(self.projector.bias)


def project_visual(dense: torch.Tensor, projector: nn.Conv2d, l_v: int) -> torch.Tensor:
    """Dense patch grid -> l_v visual prompt tokens.

    Adaptive average pooling to a g x g grid (g = sqrt(l_v)), a 1x1
    convolution into the prompt width, then a row-major flatten.
    """
    g = math.isqrt(l_v)
    if g * g != l_v:
        raise ConfigError(f"l_v={l_v} is not a perfect square")
    squeeze = dense.ndim == 3
    if squeeze:
        dense = dense.unsqueeze(0)
    pooled = F.adaptive_avg_pool2d(dense, g)
    tokens = projector(pooled)  # (B, prompt_dim, g, g)
    b, d = tokens.shape[:2]
    tokens = tokens.reshape(b, d, g * g).transpose(1, 2)  # row-major grid order
    return tokens.squeeze(0) if squeeze else tokens


class Conditioner:
    """Produces ConditionEmbeddings for a chosen variant.

    Frame-independent variants (null, text, coop) are encoded once per call
    and broadcast over a batch; orca-family variants encode per frame.
    """

    def __init__(self, text_encoder: ToyTextEncoder, vision_encoder: ToyVisionEncoder | None = None,
                 bank: PromptBank | None = None, max_condition_len: int = 77):
        self.text_encoder = text_encoder
        self.vision_encoder = vision_encoder
        self.bank = bank
        self.max_condition_len = max_condition_len
        self.warnings: list[str] = []
        self._frozen_cache: dict[tuple, tuple[torch.Tensor, list[str]]] = {}
        if bank is not None and bank.l_t + bank.l_v + 2 > max_condition_len:
            raise ConfigError(
                f"l_t + l_v + 2 = {bank.l_t + bank.l_v + 2} exceeds max length {max_condition_len}")

    # -- frame-independent variants ------------------------------------

    def encode_null(self) -> ConditionEmbedding:
        """Empty prompt: bos and eos only."""
        tokens, labels = self._encode_frozen_ids("")
        return ConditionEmbedding(tokens=tokens, variant_tag="null", token_labels=labels)

    def encode_text(self, prompt: str) -> ConditionEmbedding:
        tag = "null" if not prompt.split() else "text"
        tokens, labels = self._encode_frozen_ids(prompt)
        return ConditionEmbedding(tokens=tokens, variant_tag=tag, token_labels=labels)

    def _encode_frozen_ids(self, prompt: str) -> tuple[torch.Tensor, list[str]]:
        key = ("text", prompt)
        if key not in self._frozen_cache:
            tok = self.text_encoder.tokenizer
            words = prompt.split()
            budget = self.max_condition_len - 2
            if len(words) > budget:
                self.warnings.append(
                    f"prompt truncated from {len(words)} to {budget} words: {prompt[:60]!r}")
                words = words[:budget]
            ids = [tok.bos_id] + [tok.word_id(w) for w in words] + [tok.eos_id]
            labels = ["<bos>"] + words + ["<eos>"]
            with torch.no_grad():
                tokens = self.text_encoder.encode_ids(ids)
            self._frozen_cache[key] = (tokens, labels)
        tokens, labels = self._frozen_cache[key]
        return tokens, list(labels)

    def encode_coop(self, class_text: str) -> ConditionEmbedding:
        """Learnable prefix tokens followed by the task name."""
        if self.bank is None:
            raise ConfigError("coop variant requires a prompt bank")
        tok = self.text_encoder.tokenizer
        words = class_text.split()
        prefix = self.bank.task_tokens[: self.bank.l_t]
        n = 2 + self.bank.l_t + len(words)
        if n > self.max_condition_len:
            self.warnings.append(f"coop class text truncated: {class_text!r}")
            words = words[: self.max_condition_len - 2 - self.bank.l_t]
        with torch.no_grad():
            word_embs = self.text_encoder.embed_ids([tok.word_id(w) for w in words])
            bos = self.text_encoder.bos_embedding().unsqueeze(0)
            eos = self.text_encoder.eos_embedding().unsqueeze(0)
        seq = torch.cat([bos, prefix, word_embs, eos], dim=0)
        tokens = self.text_encoder.forward_embeddings(seq)
        labels = (["<bos>"] + [f"ctx_{i}" for i in range(self.bank.l_t)]
                  + words + ["<eos>"])
        return ConditionEmbedding(tokens=tokens, variant_tag="coop", token_labels=labels)

    # -- frame-wise variants ---------------------------------------------

    def orca_tag(self) -> str:
        if self.bank.l_t > 0 and self.bank.l_v > 0:
            return "orca"
        return "task_only" if self.bank.l_t > 0 else "visual_only"

    def orca_labels(self) -> list[str]:
        return (["<bos>"] + [f"task_{i}" for i in range(self.bank.l_t)]
                + [f"vis_{i}" for i in range(self.bank.l_v)] + ["<eos>"])

    def encode_orca_batch(self, frames: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) frames -> (B, 1+l_t+l_v+1, D) encoded conditions."""
        if self.bank is None:
            raise ConfigError("orca variant requires a prompt bank")
        bank = self.bank
        if bank.l_t + bank.l_v < 1:
            raise ConfigError("orca needs l_t + l_v >= 1")
        b = frames.shape[0]
        parts = [self.text_encoder.bos_embedding().reshape(1, 1, -1).expand(b, 1, -1)]
        if bank.l_t > 0:
            parts.append(bank.task_tokens[: bank.l_t].unsqueeze(0).expand(b, -1, -1))
        if bank.l_v > 0:
            if self.vision_encoder is None:
                raise ConfigError("visual prompts require a vision encoder")
            dense = self.vision_encoder(frames)
            parts.append(project_visual(dense, bank.projector, bank.l_v))
        parts.append(self.text_encoder.eos_embedding().reshape(1, 1, -1).expand(b, 1, -1))
        seq = torch.cat(parts, dim=1)
        return self.text_encoder.forward_embeddings(seq)

    def encode_orca(self, frame) -> ConditionEmbedding:
        """Task + visual prompt condition for one observation."""
        from .utils import frames_to_tensor

        if not isinstance(frame, torch.Tensor):
            frame = frames_to_tensor(frame)[0]
        tokens = self.encode_orca_batch(frame.unsqueeze(0))[0]
        return ConditionEmbedding(tokens=tokens, variant_tag=self.orca_tag(),
                                  token_labels=self.orca_labels())
