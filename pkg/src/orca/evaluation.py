"""Rollout evaluation, seed aggregation and the ablation grid harness.

The report path writes a row-per-checkpoint CSV, a rendered summary table
(CSV + plain text) and a matplotlib bar chart next to them.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .envs import ENV_SPECS, make_env
from .errors import AggregationError, ConfigError, ContractViolation


@dataclass
class RunResult:
    """Per-seed record of one training run's periodic evaluations."""

    run_id: str
    env_id: str
    condition_variant: str
    tap_set: tuple[str, ...]
    timestep: int
    seed: int
    per_checkpoint: list[tuple[int, float]]  # (epoch, metric)
    metric_kind: str
    best_metric: float = field(default=None)  # type: ignore[assignment]
    row_label: str = ""
    config_hash: str = ""

    def __post_init__(self):
        self.tap_set = tuple(self.tap_set)
        self.per_checkpoint = [(int(e), float(m)) for e, m in self.per_checkpoint]
        best = max(m for _, m in self.per_checkpoint) if self.per_checkpoint else 0.0
        if self.best_metric is None:
            self.best_metric = best
        elif abs(self.best_metric - best) > 1e-12:
            raise ContractViolation(
                f"best_metric {self.best_metric} != max over checkpoints {best}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunResult":
        payload = json.loads(text)
        payload["per_checkpoint"] = [tuple(x) for x in payload["per_checkpoint"]]
        payload["tap_set"] = tuple(payload["tap_set"])
        return cls(**payload)


def evaluate_policy(env_id: str, act_fn, n_episodes: int = 25, seed: int = 0,
                    obs_stack: int = 1) -> float:
    """Mean metric over greedy rollouts, stepping all episodes in lockstep.

    ``act_fn(frames, proprios, envs) -> actions`` receives batched
    observations; with obs_stack > 1 frames carry the trailing window.
    Fully deterministic for a fixed seed.
    """
    spec = ENV_SPECS.get(env_id)
    if spec is None:
        raise ConfigError(f"unknown env {env_id!r}")
    envs = [make_env(env_id) for _ in range(n_episodes)]
    frames, proprios = [], []
    for i, env in enumerate(envs):
        ep_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        obs, proprio = env.reset(ep_seed)
        frames.append(obs)
        proprios.append(proprio)
    histories = [deque([f] * obs_stack, maxlen=obs_stack) for f in frames]

    for _ in range(spec.episode_len):
        if obs_stack > 1:
            batch = np.stack([np.stack(list(h)) for h in histories])
        else:
            batch = np.stack(frames)
        actions = np.asarray(act_fn(batch, np.stack(proprios), envs))
        if actions.shape != (n_episodes, spec.action_dim):
            raise ContractViolation(
                f"actions shape {actions.shape} != {(n_episodes, spec.action_dim)}")
        for i, env in enumerate(envs):
            obs, proprio, _, _, _ = env.step(actions[i])
            frames[i] = obs
            proprios[i] = proprio
            histories[i].append(obs)
    return float(np.mean([env.episode_metric() for env in envs]))


def agent_act_fn(agent):
    """Adapter: an Agent as an evaluate_policy act function."""
    def act(frames, proprios, envs):
        return agent.act(frames, proprios if agent.use_proprio else None)
    return act


def expert_act_fn():
    """Adapter: the scripted expert (privileged state access) as a policy."""
    def act(frames, proprios, envs):
        return np.stack([env.expert_action() for env in envs])
    return act


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def aggregate(results: list[RunResult]) -> list[dict]:
    """Summary rows: per-(row, task) mean and population std over seeds,
    plus a per-row mean across tasks."""
    if not results:
        return []
    cells: dict[tuple[str, str], list[RunResult]] = {}
    row_order: list[str] = []
    env_order: list[str] = []
    for r in results:
        label = r.row_label or r.condition_variant
        if label not in row_order:
            row_order.append(label)
        if r.env_id not in env_order:
            env_order.append(r.env_id)
        cells.setdefault((label, r.env_id), []).append(r)
    rows = []
    for label in row_order:
        cell_stats: dict[str, tuple[float, float, int]] = {}
        for env_id in env_order:
            members = cells.get((label, env_id))
            if not members:
                continue
            kinds = {m.metric_kind for m in members}
            if len(kinds) > 1:
                raise AggregationError(
                    f"cell ({label}, {env_id}) mixes metric kinds {sorted(kinds)}")
            values = np.array([m.best_metric for m in members], dtype=np.float64)
            cell_stats[env_id] = (float(values.mean()), float(values.std()), len(values))
        row_mean = float(np.mean([s[0] for s in cell_stats.values()])) if cell_stats else float("nan")
        rows.append({"label": label, "cells": cell_stats, "mean": row_mean})
    return rows


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

ABLATION_AXES = ("components", "layers", "timesteps", "variants")

_ALL_TAPS = ("down_1", "down_2", "down_3", "mid", "up_0", "up_1", "up_2")
_DEFAULT_TAPS = ("down_1", "down_2", "down_3", "mid")


@dataclass(frozen=True)
class AblationGrid:
    axis: str
    values: tuple
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {self.axis!r}")
        if not self.values or len(set(self.labels)) != len(self.labels):
            raise ConfigError("grid values must be non-empty and labels unique")


def make_grid(axis: str) -> AblationGrid:
    if axis == "components":
        return AblationGrid(axis, ("null", "task_only", "visual_only", "orca"),
                            ("neither", "p_t only", "p_v only", "both"))
    if axis == "layers":
        values = tuple([(t,) for t in _ALL_TAPS] + [_DEFAULT_TAPS])
        labels = _ALL_TAPS + ("down_1-3, mid",)
        return AblationGrid(axis, values, labels)
    if axis == "timesteps":
        return AblationGrid(axis, (200, 100, 0), ("200", "100", "0"))
    if axis == "variants":
        variants = ("null", "text_simple", "text_caption", "coop", "orca",
                    "task_only", "visual_only")
        return AblationGrid(axis, variants, variants)
    raise ConfigError(f"unknown ablation axis {axis!r}")


def apply_axis_value(config_dict: dict, axis: str, value) -> dict:
    """A copy of the dotted-key config with one grid value applied."""
    out = dict(config_dict)
    if axis in ("components", "variants"):
        out["condition.variant"] = value
    elif axis == "layers":
        out["backbone.taps"] = list(value)
    elif axis == "timesteps":
        out["backbone.timestep"] = int(value)
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    return out


def run_ablation(grid: AblationGrid, base_config: dict, job_fn, out_dir: Path | str,
                 envs: list[str], seeds: list[int], workers: int = 1):
    """Train + evaluate one run per (grid value, task, seed); emit tables.

    ``job_fn(config_dict) -> RunResult-json`` executes one cell; failures are
    collected per cell rather than aborting the grid. Returns
    (results, failures).
    """
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    jobs = []
    for value, label in zip(grid.values, grid.labels):
        for env_id in envs:
            for seed in seeds:
                cfg = apply_axis_value(base_config, grid.axis, value)
                cfg["env.env_id"] = env_id
                cfg["run.seed"] = seed
                jobs.append((label, env_id, seed, cfg))

    results: list[RunResult] = []
    failures: list[dict] = []

    def finish(label, env_id, seed, payload=None, error=None):
        slug = f"{grid.axis}_{_slug(label)}_{env_id}_s{seed}"
        cell_path = out_dir / "cells" / f"{slug}.json"
        if error is not None:
            failures.append({"label": label, "env_id": env_id, "seed": seed,
                             "error": str(error)})
            cell_path.write_text(json.dumps({"error": str(error)}, indent=2))
        else:
            result = RunResult.from_json(payload)
            result.row_label = label
            tmp = cell_path.with_suffix(".tmp")
            tmp.write_text(result.to_json())
            tmp.replace(cell_path)  # atomic per cell
            results.append(result)

    if workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = {pool.submit(job_fn, cfg): (label, env_id, seed)
                       for label, env_id, seed, cfg in jobs}
            for fut, (label, env_id, seed) in futures.items():
                try:
                    finish(label, env_id, seed, payload=fut.result())
                except Exception as exc:  # annotate, keep going
                    finish(label, env_id, seed, error=exc)
    else:
        for label, env_id, seed, cfg in jobs:
            try:
                finish(label, env_id, seed, payload=job_fn(cfg))
            except Exception as exc:
                finish(label, env_id, seed, error=exc)

    write_results_csv(results, out_dir / "results.csv")
    write_summary(aggregate(results), envs, failures, out_dir,
                  title=f"axis={grid.axis}", row_labels=list(grid.labels))
    return results, failures


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in text).strip("-")


# ---------------------------------------------------------------------------
# Table and figure emission
# ---------------------------------------------------------------------------


def write_results_csv(results: list[RunResult], path: Path) -> None:
    """Row per evaluated checkpoint."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "env_id", "variant", "tap_set", "timestep",
                         "seed", "epoch", "metric", "best_metric"])
        for r in results:
            for epoch, metric in r.per_checkpoint:
                writer.writerow([r.run_id, r.env_id, r.condition_variant,
                                 "+".join(r.tap_set), r.timestep, r.seed,
                                 epoch, f"{metric:.6f}", f"{r.best_metric:.6f}"])


def write_summary(rows: list[dict], envs: list[str], failures: list[dict],
                  out_dir: Path, title: str = "",
                  row_labels: list[str] | None = None) -> None:
    """Emit summary.csv / summary.txt / summary.png.

    ``row_labels`` pins the full row set so rows whose every run failed still
    appear, failure-annotated, keeping |values| x |tasks| cells in the table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed_cells = {(f["label"], f["env_id"]) for f in failures}
    if row_labels:
        by_label = {r["label"]: r for r in rows}
        rows = [by_label.get(label, {"label": label, "cells": {}, "mean": float("nan")})
                for label in row_labels]

    def cell_text(row, env_id):
        if (row["label"], env_id) in failed_cells and env_id not in row["cells"]:
            return "FAILED"
        if env_id not in row["cells"]:
            return ""
        mean, std, _ = row["cells"][env_id]
        return f"{mean:.3f} +/- {std:.3f}"

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + envs + ["mean"])
        for row in rows:
            writer.writerow([row["label"]]
                            + [cell_text(row, e) for e in envs]
                            + [f"{row['mean']:.3f}"])

    widths = [max(12, max((len(r["label"]) for r in rows), default=4) + 2)]
    header = ["row"] + envs + ["mean"]
    lines = [title] if title else []
    cols = [header[0].ljust(widths[0])] + [h.rjust(18) for h in header[1:]]
    lines.append("".join(cols))
    lines.append("-" * len(lines[-1]))
    for row in rows:
        cells = [row["label"].ljust(widths[0])]
        cells += [cell_text(row, e).rjust(18) for e in envs]
        cells += [f"{row['mean']:.3f}".rjust(18)]
        lines.append("".join(cells))
    if failures:
        lines.append("")
        lines.append(f"{len(failures)} failed cell run(s):")
        for f in failures:
            lines.append(f"  {f['label']} / {f['env_id']} / seed {f['seed']}: {f['error']}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    plot_summary(rows, envs, out_dir / "summary.png", title=title)


def plot_summary(rows: list[dict], envs: list[str], path: Path, title: str = "") -> None:
    """Grouped bar chart of the summary table with std error bars."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r["label"] for r in rows]
    x = np.arange(len(labels), dtype=np.float64)
    width = 0.8 / max(len(envs), 1)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(labels)), 3.6))
    for j, env_id in enumerate(envs):
        means = [r["cells"].get(env_id, (np.nan,))[0] for r in rows]
        stds = [r["cells"][env_id][1] if env_id in r["cells"] else 0.0 for r in rows]
        ax.bar(x + (j - (len(envs) - 1) / 2) * width, means, width,
               yerr=stds, capsize=3, label=env_id)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("best metric")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
