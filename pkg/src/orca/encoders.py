"""Frozen toy text and vision encoders.

Both stand in for large pretrained encoders: they are randomly initialized
from fixed seeds, frozen, and expose the same contracts the real ones would
(causal token encoder, dense patch-grid features).
"""

from __future__ import annotations

import zlib

import torch
import torch.nn as nn

from .nets import TransformerBlock
from .utils import freeze_module, seeded_init

BOS_ID = 0
EOS_ID = 1
_NUM_SPECIAL = 2

TEXT_ENCODER_SEED = 7340051
VISION_ENCODER_SEED = 9220417


class ToyTokenizer:
    """Whitespace tokenizer hashing words into a fixed vocabulary.

    Stable across processes (CRC32, not Python's salted hash).
    """

    def __init__(self, vocab_size: int = 512):
        self.vocab_size = vocab_size
        self.bos_id = BOS_ID
        self.eos_id = EOS_ID

    def word_id(self, word: str) -> int:
        return _NUM_SPECIAL + zlib.crc32(word.lower().encode()) % (self.vocab_size - _NUM_SPECIAL)

    def encode(self, text: str) -> list[int]:
        """bos + word ids + eos."""
        return [self.bos_id] + [self.word_id(w) for w in text.split()] + [self.eos_id]


class ToyTextEncoder(nn.Module):
    """Small frozen causal encoder standing in for a pretrained text tower.

    Accepts either token ids or raw input embeddings, so learnable prompt
    vectors can be spliced into the sequence before encoding. Output width
    equals the denoiser's condition width.
    """

    def __init__(self, dim: int = 32, vocab_size: int = 512, max_len: int = 77,
                 depth: int = 2, seed: int = TEXT_ENCODER_SEED):
        super().__init__()
        self.dim = dim
        self.max_len = max_len
        self.tokenizer = ToyTokenizer(vocab_size)
        with seeded_init(seed):
            self.token_emb = nn.Embedding(vocab_size, dim)
            self.pos_emb = nn.Parameter(torch.randn(max_len, dim) * 0.02)
            self.blocks = nn.ModuleList(
                TransformerBlock(dim, heads=2, causal=True) for _ in range(depth))
            self.final_norm = nn.LayerNorm(dim)
        freeze_module(self)

    @property
    def prompt_dim(self) -> int:
        return self.dim

    def embed_ids(self, ids: list[int]) -> torch.Tensor:
        """Raw input embeddings for a list of token ids, shape (L, dim)."""
        idx = torch.tensor(ids, dtype=torch.long)
        return self.token_emb(idx)

    def bos_embedding(self) -> torch.Tensor:
        return self.token_emb.weight[BOS_ID]

    def eos_embedding(self) -> torch.Tensor:
        return self.token_emb.weight[EOS_ID]

    def forward_embeddings(self, embs: torch.Tensor) -> torch.Tensor:
        """Encode input embeddings (L, dim) or (B, L, dim) through the causal stack."""
        squeeze = embs.ndim == 2
        if squeeze:
            embs = embs.unsqueeze(0)
        n = embs.shape[1]
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        x = embs + self.pos_emb[:n].to(embs.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        return x.squeeze(0) if squeeze else x

    def encode_ids(self, ids: list[int]) -> torch.Tensor:
        return self.forward_embeddings(self.embed_ids(ids))


class ToyVisionEncoder(nn.Module):
    """Frozen patch-embedding encoder producing a dense feature grid.

    Patchifies to an 8x8 grid (or smaller for tiny test images) and applies
    one self-attention block, yielding (dim, g, g) per frame.
    """

    def __init__(self, image_size: int = 64, dim: int = 48, grid: int = 8,
                 depth: int = 1, seed: int = VISION_ENCODER_SEED):
        super().__init__()
        patch = max(1, image_size // grid)
        self.grid = image_size // patch
        self.dim = dim
        with seeded_init(seed):
            self.patchify = nn.Conv2d(3, dim, kernel_size=patch, stride=patch)
            self.pos_emb = nn.Parameter(torch.randn(self.grid * self.grid, dim) * 0.02)
            self.blocks = nn.ModuleList(
                TransformerBlock(dim, heads=2, causal=False) for _ in range(depth))
            self.final_norm = nn.LayerNorm(dim)
        freeze_module(self)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) frames in [0,1] -> dense grid features (B, dim, g, g)."""
        x = self.patchify(frames)  # (B, dim, g, g)
        b, d, gh, gw = x.shape
        tokens = x.reshape(b, d, gh * gw).transpose(1, 2) + self.pos_emb[: gh * gw].to(x.dtype)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.final_norm(tokens)
        return tokens.transpose(1, 2).reshape(b, d, gh, gw)
