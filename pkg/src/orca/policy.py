"""Behavior-cloning head: action prediction, the regression objective, training."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, ContractViolation, TrainingDiverged
from .pipeline import Agent
from .utils import seeded_init


@dataclass
class PolicyConfig:
    action_dim: int
    hidden_sizes: tuple[int, ...] = (256, 256)
    use_proprio: bool = False
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    loss_kind: str = "mse"
    obs_stack: int = 1

    def __post_init__(self):
        if self.action_dim < 1:
            raise ConfigError("action_dim must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.loss_kind not in ("mse", "l1"):
            raise ConfigError(f"loss_kind must be mse or l1, got {self.loss_kind!r}")


class PolicyNet(nn.Module):
    """MLP over the fused state vector (plus optional proprioception)."""

    def __init__(self, input_dim: int, config: PolicyConfig, seed: int = 0):
        super().__init__()
        self.input_dim = input_dim
        layers: list[nn.Module] = []
        with seeded_init(seed):
            width = input_dim
            for h in config.hidden_sizes:
                layers += [nn.Linear(width, h), nn.ReLU()]
                width = h
            layers.append(nn.Linear(width, config.action_dim))
            self.net = nn.Sequential(*layers)

    def forward(self, state_vec: torch.Tensor) -> torch.Tensor:
        if state_vec.shape[-1] != self.input_dim:
            raise ContractViolation(
                f"state vector length {state_vec.shape[-1]} != expected {self.input_dim}")
        return self.net(state_vec)


def predict_action(policy: PolicyNet, state_vec: torch.Tensor,
                   proprio: torch.Tensor | None = None) -> torch.Tensor:
    """Deterministic action for one state vector (proprio concatenated when given)."""
    if proprio is not None:
        state_vec = torch.cat([state_vec, proprio.to(state_vec.dtype)], dim=-1)
    with torch.no_grad():
        return policy(state_vec)


def bc_loss(pred: torch.Tensor, target: torch.Tensor, kind: str = "mse") -> torch.Tensor:
    """Regression distance between predicted and demonstrated actions.

    Mean over action dimensions and over the batch; always non-negative.
    """
    if pred.shape != target.shape:
        raise ContractViolation(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if kind == "mse":
        return (pred - target).pow(2).mean()
    if kind == "l1":
        return (pred - target).abs().mean()
    raise ConfigError(f"unknown loss kind {kind!r}")


@dataclass
class TrainState:
    """Everything trainable plus bookkeeping; frozen networks are not members."""

    agent: Agent
    optimizer: torch.optim.Optimizer
    seed: int
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    eval_records: list[tuple[int, float]] = field(default_factory=list)

    def checkpoint_payload(self, manifest: dict) -> dict:
        pipeline = self.agent.pipeline
        payload = {
            "policy": self.agent.policy.state_dict(),
            "compression": pipeline.compression.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "manifest": dict(manifest, epoch=self.epoch, seed=self.seed),
        }
        if pipeline.conditioner.bank is not None:
            payload["prompt_bank"] = pipeline.conditioner.bank.state_dict()
        return payload


def save_checkpoint(state: TrainState, path: Path, manifest: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(state.checkpoint_payload(manifest), path)


def load_checkpoint(path: Path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=True)


def restore_agent(agent: Agent, payload: dict) -> Agent:
    """Load checkpointed trainable weights into a freshly wired agent."""
    agent.policy.load_state_dict(payload["policy"])
    agent.pipeline.compression.load_state_dict(payload["compression"])
    if "prompt_bank" in payload and agent.pipeline.conditioner.bank is not None:
        agent.pipeline.conditioner.bank.load_state_dict(payload["prompt_bank"])
    return agent


def _flatten_pairs(dataset, obs_stack: int):
    """(frames, proprio, action) arrays from a demo dataset.

    With obs_stack > 1 each sample carries its trailing frame window
    (duplicating the first frame at episode starts).
    """
    frames, proprios, actions = [], [], []
    for ep in dataset.episodes:
        n = len(ep.actions)
        for t in range(n):
            if obs_stack > 1:
                idx = [max(0, t - k) for k in range(obs_stack - 1, -1, -1)]
                frames.append(np.stack([ep.observations[i] for i in idx]))
            else:
                frames.append(ep.observations[t])
            proprios.append(ep.proprios[t])
            actions.append(ep.actions[t])
    return (np.asarray(frames, dtype=np.float32),
            np.asarray(proprios, dtype=np.float32),
            np.asarray(actions, dtype=np.float32))


def train(dataset, agent: Agent, config: PolicyConfig, out_dir: Path | str,
          seed: int = 0, eval_every: int = 10, eval_fn=None,
          manifest: dict | None = None, log_fn=None) -> TrainState:
    """Behavior cloning over demonstration pairs.

    Per batch: per-frame conditions, frozen feature extraction, fusion,
    action prediction, and a backward pass into policy + compression +
    prompt bank only. Every ``eval_every`` epochs a checkpoint is written
    and ``eval_fn(epoch, checkpoint_path) -> metric`` is invoked on it.
    Raises TrainingDiverged (after writing a diagnostic manifest) if the
    loss stops being finite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest or {})
    if not dataset.episodes:
        raise ConfigError("dataset has no episodes")

    frames, proprios, actions = _flatten_pairs(dataset, config.obs_stack)
    n = len(actions)
    pipeline = agent.pipeline
    params = (list(agent.policy.parameters())
              + list(pipeline.compression.parameters())
              + pipeline.prompt_parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    state = TrainState(agent=agent, optimizer=optimizer, seed=seed)
    rng = np.random.default_rng(seed)

    agent.policy.train()
    pipeline.compression.train()
    start = time.time()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss, batches = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo: lo + config.batch_size]
            batch_frames = frames[idx]
            batch_proprio = torch.from_numpy(proprios[idx]) if config.use_proprio else None
            target = torch.from_numpy(actions[idx])
            inputs = agent.state_inputs(batch_frames, batch_proprio)
            pred = agent.policy(inputs)
            loss = bc_loss(pred, target, config.loss_kind)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_val = float(loss.detach())
            if not np.isfinite(loss_val):
                diag = out_dir / "divergence_manifest.json"
                diag.write_text(json.dumps({
                    "epoch": epoch, "step": len(state.loss_history),
                    "loss": loss_val, "seed": seed,
                    "recent_losses": state.loss_history[-20:], **manifest,
                }, indent=2))
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", manifest_path=str(diag))
            state.loss_history.append(loss_val)
            epoch_loss += loss_val
            batches += 1
        state.epoch = epoch
        state.epoch_losses.append(epoch_loss / max(batches, 1))
        if log_fn is not None:
            log_fn(epoch, state.epoch_losses[-1])
        if epoch % eval_every == 0:
            ckpt = out_dir / f"ckpt_e{epoch:03d}.pt"
            save_checkpoint(state, ckpt, manifest)
            if eval_fn is not None:
                metric = float(eval_fn(epoch, ckpt))
                state.eval_records.append((epoch, metric))
    manifest["train_seconds"] = round(time.time() - start, 3)
    return state
