"""Run orchestration: wiring modules from a RunConfig into training jobs."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np
import torch

from .backbone import ExtractionConfig, ToyBackend, create_backend, pretrain_denoiser
from .compression import CompressionBank, CompressionConfig
from .conditioner import Conditioner, PromptBank, load_captions
from .config import RunConfig
from .encoders import ToyTextEncoder, ToyVisionEncoder
from .envs import ENV_SPECS, generate_demos, load_demos, make_env, save_demos
from .errors import ConfigError
from .evaluation import RunResult, agent_act_fn, evaluate_policy
from .pipeline import Agent, FeaturePipeline
from .policy import PolicyConfig, PolicyNet, load_checkpoint, restore_agent, train
from .utils import derive_seed


def demo_archive_path(out_root: Path, env_id: str, n: int, seed: int) -> Path:
    return Path(out_root) / "demos" / f"{env_id}_n{n}_s{seed}.zip"


def effective_demo_count(cfg: RunConfig) -> int:
    n = cfg["env.demos"]
    return n if n > 0 else ENV_SPECS[cfg["env.env_id"]].default_demos


def ensure_demos(cfg: RunConfig, auto: bool = True) -> Path:
    """Resolve (and optionally create) the demo archive for a config."""
    env_id = cfg["env.env_id"]
    n = effective_demo_count(cfg)
    path = demo_archive_path(cfg.out_dir, env_id, n, cfg["env.demo_seed"])
    if path.exists():
        return path
    if not auto:
        raise FileNotFoundError(
            f"demo archive missing: {path} (run gen-demos first)")
    dataset = generate_demos(env_id, n, cfg["env.demo_seed"])
    tmp = path.with_suffix(".tmp")
    save_demos(dataset, tmp)
    tmp.replace(path)  # atomic; concurrent writers produce identical bytes
    return path


def resolve_prompt(cfg: RunConfig) -> tuple[str, str]:
    """(text prompt, coop class text) for the configured variant."""
    variant = cfg["condition.variant"]
    key = cfg["condition.caption_key"] or cfg["env.env_id"]
    if variant not in ("text_simple", "text_caption", "coop"):
        return "", ""
    captions = load_captions()
    if key not in captions:
        raise ConfigError(f"no caption entry for task {key!r}")
    if variant == "text_simple":
        return captions[key]["simple"], ""
    if variant == "text_caption":
        return captions[key]["caption"], ""
    return "", captions[key]["simple"]


def build_frozen_stack(cfg: RunConfig):
    """The frozen networks: backend + text/vision encoders (fixed seeds)."""
    backend = create_backend(cfg["backbone.backend_id"], cfg["backbone.checkpoint_path"])
    image_size = backend.descriptor.latent_shape[1]
    text_encoder = ToyTextEncoder(dim=backend.descriptor.condition_dim,
                                  max_len=backend.descriptor.max_condition_len)
    vision_encoder = ToyVisionEncoder(image_size=image_size)
    return backend, text_encoder, vision_encoder


def build_agent(cfg: RunConfig, frozen_stack, seed: int) -> Agent:
    """A freshly initialized trainable agent on top of the frozen stack."""
    backend, text_encoder, vision_encoder = frozen_stack
    variant = cfg["condition.variant"]
    l_t = cfg["condition.l_t"] if variant in ("orca", "task_only", "coop") else 0
    l_v = cfg["condition.l_v"] if variant in ("orca", "visual_only") else 0
    if variant == "task_only":
        l_v = 0
    if variant == "visual_only":
        l_t = 0
    if variant == "coop":
        l_v = 0
        if l_t < 1:
            raise ConfigError("coop needs at least one prefix token")
    if variant in ("orca", "task_only", "visual_only") and l_t + l_v < 1:
        raise ConfigError(f"variant {variant!r} needs l_t + l_v >= 1")
    bank = PromptBank(l_t=l_t, l_v=l_v, prompt_dim=text_encoder.prompt_dim,
                      visual_dim=vision_encoder.dim, seed=derive_seed("bank", seed))
    conditioner = Conditioner(text_encoder, vision_encoder, bank,
                              max_condition_len=backend.descriptor.max_condition_len)
    extraction = ExtractionConfig(tap_points=cfg.taps, timestep=cfg["backbone.timestep"],
                                  eps_seed=derive_seed("eps", seed),
                                  schedule=backend.schedule)
    compression = CompressionBank(
        CompressionConfig(compress_dim=cfg["compress.dim"], tap_points=cfg.taps),
        backend.descriptor.tap_shapes, seed=derive_seed("compress", seed))
    prompt, class_text = resolve_prompt(cfg)
    pipeline = FeaturePipeline(backend, conditioner, compression, extraction,
                               variant=variant, prompt=prompt, class_text=class_text)

    spec = ENV_SPECS[cfg["env.env_id"]]
    stack = cfg["policy.obs.stack"]
    use_proprio = spec.use_proprio_default
    policy_cfg = PolicyConfig(
        action_dim=spec.action_dim,
        hidden_sizes=tuple(cfg["policy.hidden_sizes"]),
        use_proprio=use_proprio,
        learning_rate=cfg["policy.lr"],
        epochs=cfg["policy.epochs"],
        batch_size=cfg["policy.batch_size"],
        loss_kind=cfg["policy.loss.kind"],
        obs_stack=stack,
    )
    input_dim = compression.fused_length * stack + (spec.proprio_dim if use_proprio else 0)
    policy = PolicyNet(input_dim, policy_cfg, seed=derive_seed("policy", seed))
    agent = Agent(pipeline, policy, use_proprio=use_proprio, obs_stack=stack)
    agent.policy_config = policy_cfg
    return agent


def run_dir_for(cfg: RunConfig) -> Path:
    return cfg.out_dir / "train" / cfg.config_hash()


def execute_run(cfg: RunConfig, out_dir: Path | None = None, auto_demos: bool = True,
                log_fn=None, timing: bool = False) -> tuple[RunResult, Path]:
    """Train one configuration end to end and persist its artifacts.

    Writes checkpoints, loss_history.csv, metrics.csv, training_curves.png,
    run_result.json and manifest.json under the run directory (named by the
    config hash). Returns the RunResult and the run directory.
    """
    from .config import write_manifest

    t0 = time.time()
    seed = cfg["run.seed"]
    torch.manual_seed(derive_seed("run", seed))
    env_id = cfg["env.env_id"]
    spec = ENV_SPECS[env_id]
    out_dir = Path(out_dir) if out_dir is not None else run_dir_for(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    archive = ensure_demos(cfg, auto=auto_demos)
    dataset = load_demos(archive)
    t_data = time.time()

    frozen_stack = build_frozen_stack(cfg)
    agent = build_agent(cfg, frozen_stack, seed)
    eval_agent = build_agent(cfg, frozen_stack, seed)
    eval_seed = derive_seed("eval", seed)

    def eval_fn(epoch: int, ckpt_path: Path) -> float:
        payload = load_checkpoint(ckpt_path)
        restore_agent(eval_agent, payload)
        return evaluate_policy(env_id, agent_act_fn(eval_agent),
                               n_episodes=cfg["eval.episodes"], seed=eval_seed,
                               obs_stack=cfg["policy.obs.stack"])

    manifest_extra = {
        "env_id": env_id,
        "demo_archive": str(archive),
        "eps_seed": derive_seed("eps", seed),
        "eval_seed": eval_seed,
    }
    state = train(dataset, agent, agent.policy_config, out_dir, seed=seed,
                  eval_every=cfg["eval.every"], eval_fn=eval_fn,
                  manifest={"config_hash": cfg.config_hash(), "config": cfg.as_dict()},
                  log_fn=log_fn)
    t_train = time.time()

    result = RunResult(
        run_id=f"{env_id}_{cfg['condition.variant']}_t{cfg['backbone.timestep']}"
               f"_s{seed}_{cfg.config_hash()[:8]}",
        env_id=env_id,
        condition_variant=cfg["condition.variant"],
        tap_set=cfg.taps,
        timestep=cfg["backbone.timestep"],
        seed=seed,
        per_checkpoint=state.eval_records,
        metric_kind=spec.metric_kind,
        config_hash=cfg.config_hash(),
    )
    (out_dir / "run_result.json").write_text(result.to_json())
    _write_training_report(out_dir, state)
    if timing:
        manifest_extra["timings"] = {
            "data_seconds": round(t_data - t0, 3),
            "train_seconds": round(t_train - t_data, 3),
            "total_seconds": round(time.time() - t0, 3),
        }
    write_manifest(out_dir, cfg, seed=seed,
                   warnings=list(agent.pipeline.conditioner.warnings),
                   **manifest_extra)
    return result, out_dir


def _write_training_report(out_dir: Path, state) -> None:
    """Delimited loss/metric records plus a rendered curve figure."""
    lines = ["step,loss"] + [f"{i},{v:.8f}" for i, v in enumerate(state.loss_history)]
    (out_dir / "loss_history.csv").write_text("\n".join(lines) + "\n")
    lines = ["epoch,metric"] + [f"{e},{m:.6f}" for e, m in state.eval_records]
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.0))
    axes[0].plot(state.loss_history, lw=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("bc loss")
    axes[0].set_yscale("log")
    if state.eval_records:
        epochs, metrics = zip(*state.eval_records)
        axes[1].plot(epochs, metrics, marker="o")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("eval metric")
    fig.tight_layout()
    fig.savefig(out_dir / "training_curves.png", dpi=110, metadata={"Software": None})
    plt.close(fig)


def execute_run_json(config_dict: dict) -> str:
    """Worker-pool entry point: config dict in, RunResult JSON out."""
    threads = os.environ.get("ORCA_TORCH_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    result, _ = execute_run(RunConfig(config_dict))
    return result.to_json()


# ---------------------------------------------------------------------------
# Denoising pre-training fixture assembly
# ---------------------------------------------------------------------------


def collect_env_frames(env_id: str, n_frames: int = 256, seed: int = 0) -> np.ndarray:
    """Frames from random-policy rollouts, for backbone pre-training."""
    env = make_env(env_id)
    rng = np.random.default_rng(derive_seed("frames", seed))
    frames = []
    episode = 0
    while len(frames) < n_frames:
        obs, _ = env.reset(int(rng.integers(2 ** 31)))
        frames.append(obs)
        for _ in range(env.spec.episode_len - 1):
            obs, _, _, done, _ = env.step(rng.uniform(-1, 1, size=env.spec.action_dim))
            frames.append(obs)
            if len(frames) >= n_frames or done:
                break
        episode += 1
    return np.stack(frames[:n_frames])


def make_pretrain_condition_fn(text_encoder: ToyTextEncoder,
                               vision_encoder: ToyVisionEncoder,
                               seed: int = 0, l_v: int = 16, null_prob: float = 0.3):
    """Conditions for pre-training: frame-derived visual tokens, with the
    null condition mixed in so unconditional features stay useful."""
    bank = PromptBank(l_t=0, l_v=l_v, prompt_dim=text_encoder.prompt_dim,
                      visual_dim=vision_encoder.dim, seed=derive_seed("pretrain-bank", seed))
    for p in bank.parameters():
        p.requires_grad_(False)
    conditioner = Conditioner(text_encoder, vision_encoder, bank)
    null_tokens = conditioner.encode_null().tokens
    rng = np.random.default_rng(derive_seed("pretrain-cond", seed))

    def condition_fn(frames: torch.Tensor) -> torch.Tensor:
        if rng.random() < null_prob:
            return null_tokens.unsqueeze(0).expand(frames.shape[0], -1, -1)
        return conditioner.encode_orca_batch(frames)

    return condition_fn


def prepare_pretrained_backbone(cache_path: Path | str, env_id: str = "point_reach",
                                steps: int = 800, n_frames: int = 256,
                                seed: int = 0) -> Path:
    """Create (or reuse) a denoising-pretrained toy backbone checkpoint."""
    cache_path = Path(cache_path)
    if cache_path.exists():
        return cache_path
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    backend = ToyBackend()
    text_encoder = ToyTextEncoder(dim=backend.descriptor.condition_dim,
                                  max_len=backend.descriptor.max_condition_len)
    vision_encoder = ToyVisionEncoder(image_size=backend.descriptor.latent_shape[1])
    frames = collect_env_frames(env_id, n_frames=n_frames, seed=seed)
    condition_fn = make_pretrain_condition_fn(text_encoder, vision_encoder, seed=seed)
    pretrain_denoiser(backend, frames, condition_fn, steps=steps, seed=seed)
    tmp = cache_path.with_suffix(".tmp")
    torch.save(backend.unet.state_dict(), tmp)
    tmp.replace(cache_path)
    return cache_path


def save_run_config_template(path: Path | str) -> Path:
    """Write a default config file users can edit."""
    cfg = RunConfig()
    path = Path(path)
    path.write_text(cfg.to_text())
    return path
