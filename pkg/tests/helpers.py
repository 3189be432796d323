"""Shared builders for desk-scale test pipelines."""

import numpy as np
import torch

from orca.backbone import ExtractionConfig, ToyBackend
from orca.compression import CompressionBank, CompressionConfig
from orca.conditioner import Conditioner, PromptBank
from orca.encoders import ToyTextEncoder, ToyVisionEncoder
from orca.envs import DemoDataset, Episode
from orca.pipeline import Agent, FeaturePipeline
from orca.policy import PolicyConfig, PolicyNet


def build_tiny_agent(variant="orca", image_size=16, dtype=torch.float32, seed=0,
                     action_dim=2, l_t=4, l_v=16, hidden=(32,), lr=1e-3,
                     epochs=5, batch_size=8, use_proprio=False, taps=None,
                     timestep=0, heads=1):
    """A fully wired agent on a small backbone, optionally in float64."""
    levels = 2
    backend = ToyBackend(image_size=image_size, levels=levels, base=4, cond_dim=16,
                         heads=heads, seed=101, backend_id=f"toy{image_size}")
    text_encoder = ToyTextEncoder(dim=16, max_len=77, seed=202)
    vision_encoder = ToyVisionEncoder(image_size=image_size, dim=12, seed=303)
    if dtype == torch.float64:
        backend.to(dtype)
        text_encoder.double()
        vision_encoder.double()
    if variant == "task_only":
        l_v = 0
    if variant in ("visual_only",):
        l_t = 0
    if variant in ("null", "text_simple", "text_caption"):
        l_t = l_v = 0
    if variant == "coop":
        l_v = 0
    bank = PromptBank(l_t=l_t, l_v=l_v, prompt_dim=16, visual_dim=12, seed=seed)
    if dtype == torch.float64:
        bank.double()
    conditioner = Conditioner(text_encoder, vision_encoder, bank)
    taps = taps or ("down_1", "down_2", "mid")
    extraction = ExtractionConfig(tap_points=taps, timestep=timestep,
                                  eps_seed=seed, schedule=backend.schedule)
    compression = CompressionBank(CompressionConfig(compress_dim=6, tap_points=taps),
                                  backend.descriptor.tap_shapes, seed=seed + 1)
    if dtype == torch.float64:
        compression.double()
    pipeline = FeaturePipeline(backend, conditioner, compression, extraction,
                               variant=variant, prompt="press the pad",
                               class_text="point reach")
    policy_cfg = PolicyConfig(action_dim=action_dim, hidden_sizes=tuple(hidden),
                              use_proprio=use_proprio, learning_rate=lr,
                              epochs=epochs, batch_size=batch_size)
    input_dim = compression.fused_length + (2 if use_proprio else 0)
    policy = PolicyNet(input_dim, policy_cfg, seed=seed + 2)
    if dtype == torch.float64:
        policy.double()
    agent = Agent(pipeline, policy, use_proprio=use_proprio)
    agent.policy_config = policy_cfg
    return agent


def synthetic_dataset(n_episodes=2, steps=6, image_size=16, seed=0, action_dim=2,
                      proprio_dim=2):
    """Random (frame, action) demonstrations with renderer-style quantization."""
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        obs = [np.round(rng.random((image_size, image_size, 3)) * 255).astype(np.uint8)
               .astype(np.float32) / 255.0 for _ in range(steps)]
        episodes.append(Episode(
            observations=obs,
            proprios=[rng.random(proprio_dim).astype(np.float32) for _ in range(steps)],
            actions=[rng.uniform(-1, 1, action_dim).astype(np.float32)
                     for _ in range(steps)],
            rewards=[0.0] * steps,
            success=False,
        ))
    return DemoDataset(env_id="synthetic", episodes=episodes, generator_seed=seed)


def finite_difference_grad(loss_fn, parameter: torch.nn.Parameter,
                           coords, h: float = 1e-5) -> list[float]:
    """Central finite differences of loss_fn() along chosen flat coordinates."""
    grads = []
    flat = parameter.data.view(-1)
    for idx in coords:
        original = float(flat[idx])
        flat[idx] = original + h
        hi = float(loss_fn())
        flat[idx] = original - h
        lo = float(loss_fn())
        flat[idx] = original
        grads.append((hi - lo) / (2 * h))
    return grads
