"""Wiring of backbone, conditioner and compression into a state-vector pipeline."""

from __future__ import annotations

import numpy as np
import torch

from .backbone import ExtractionConfig, extract_features_batch
from .compression import CompressionBank
from .conditioner import Conditioner
from .errors import ConfigError
from .utils import frames_to_tensor


class FeaturePipeline:
    """frames -> condition -> frozen denoiser taps -> fused state vectors.

    ``variant`` selects the conditioner path; text variants carry their
    resolved prompt, coop its class text.
    """

    def __init__(self, backend, conditioner: Conditioner, compression: CompressionBank,
                 extraction: ExtractionConfig, variant: str = "orca",
                 prompt: str = "", class_text: str = ""):
        self.backend = backend
        self.conditioner = conditioner
        self.compression = compression
        self.extraction = extraction
        self.variant = variant
        self.prompt = prompt
        self.class_text = class_text
        if variant in ("text_simple", "text_caption") and not prompt.split():
            raise ConfigError(f"variant {variant!r} needs a non-empty prompt")

    @property
    def fused_length(self) -> int:
        return self.compression.fused_length

    def conditions_for(self, frames: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) frames -> (B,L,D) condition tokens for the active variant."""
        b = frames.shape[0]
        if self.variant == "null":
            return self.conditioner.encode_null().tokens.unsqueeze(0).expand(b, -1, -1)
        if self.variant in ("text_simple", "text_caption"):
            return self.conditioner.encode_text(self.prompt).tokens.unsqueeze(0).expand(b, -1, -1)
        if self.variant == "coop":
            return self.conditioner.encode_coop(self.class_text).tokens.unsqueeze(0).expand(b, -1, -1)
        if self.variant in ("orca", "task_only", "visual_only"):
            return self.conditioner.encode_orca_batch(frames)
        raise ConfigError(f"unknown condition variant {self.variant!r}")

    def state_vectors(self, frames: np.ndarray | torch.Tensor) -> torch.Tensor:
        """Fused state vectors (B, fused_length) for a batch of frames."""
        if not isinstance(frames, torch.Tensor):
            frames = frames_to_tensor(frames)
        cond = self.conditions_for(frames)
        features = extract_features_batch(self.backend, frames, cond, self.extraction)
        return self.compression.fuse_features(features)

    def trainable_modules(self) -> dict[str, torch.nn.Module]:
        mods: dict[str, torch.nn.Module] = {"compression": self.compression}
        if self.conditioner.bank is not None:
            mods["prompt_bank"] = self.conditioner.bank
        return mods

    def prompt_parameters(self) -> list[torch.nn.Parameter]:
        """The prompt-bank parameters actually exercised by the active variant."""
        bank = self.conditioner.bank
        if bank is None:
            return []
        if self.variant in ("coop", "orca", "task_only") and bank.l_t > 0:
            task = [bank.task_tokens]
        else:
            task = []
        if self.variant in ("orca", "visual_only") and bank.l_v > 0:
            proj = list(bank.projector.parameters())
        else:
            proj = []
        return task + proj


class Agent:
    """A policy head on top of a feature pipeline."""

    def __init__(self, pipeline: FeaturePipeline, policy, use_proprio: bool = False,
                 obs_stack: int = 1):
        self.pipeline = pipeline
        self.policy = policy
        self.use_proprio = use_proprio
        self.obs_stack = obs_stack

    def state_inputs(self, frames, proprios=None) -> torch.Tensor:
        """Policy inputs for a batch.

        With obs_stack > 1 frames arrive as (B, stack, H, W, 3) (oldest
        first); the fused vectors of the stacked frames are concatenated.
        """
        if self.obs_stack > 1:
            if not isinstance(frames, torch.Tensor):
                arr = np.asarray(frames, dtype=np.float32)
                b, k = arr.shape[:2]
                vec = self.pipeline.state_vectors(arr.reshape(b * k, *arr.shape[2:]))
            else:
                b, k = frames.shape[:2]
                vec = self.pipeline.state_vectors(frames.reshape(b * k, *frames.shape[2:]))
            vec = vec.reshape(b, k * self.pipeline.fused_length)
        else:
            vec = self.pipeline.state_vectors(frames)
        if self.use_proprio:
            if proprios is None:
                raise ConfigError("policy configured with proprioception but none given")
            if not isinstance(proprios, torch.Tensor):
                proprios = torch.as_tensor(np.asarray(proprios, dtype=np.float32))
            vec = torch.cat([vec, proprios.to(vec.dtype)], dim=-1)
        return vec

    def act(self, frames, proprios=None) -> np.ndarray:
        """Greedy actions for a batch of observations (no grad, eval mode)."""
        was_training = self.policy.training
        self.policy.eval()
        self.pipeline.compression.eval()
        try:
            with torch.no_grad():
                actions = self.policy(self.state_inputs(frames, proprios))
        finally:
            if was_training:
                self.policy.train()
                self.pipeline.compression.train()
        return actions.cpu().numpy()
