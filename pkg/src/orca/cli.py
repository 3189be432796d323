"""Command-line entry points: gen-demos, train, eval, ablate, viz-attn.

Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence,
5 partial ablation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, describe_defaults, load_config, parse_value
from .errors import ConfigError, GenerationError, OrcaError, TrainingDiverged

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_PARTIAL = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orca",
        description="Task-adaptive visual representations from a frozen "
                    "conditional denoiser, with behavior cloning on top.",
        epilog=describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="key=value config file (flags win over file values)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override; dotted flags like "
                             "--condition.variant VALUE also work")
    common.add_argument("--out", type=Path, default=None,
                        help="output root (overrides run.out_dir; ORCA_OUT wins)")
    common.add_argument("--force", action="store_true",
                        help="overwrite existing artifacts for this config")

    p = sub.add_parser("gen-demos", parents=[common],
                       help="generate scripted-expert demonstrations")
    p.add_argument("--env", default=None, help="environment id")
    p.add_argument("--n", type=int, default=None,
                   help="episodes (default per env family: 5/5/2)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="behavior-clone a policy",
                       epilog=describe_defaults(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=None, help="run seed")
    p.add_argument("--timing", action="store_true",
                   help="record per-phase wall times in the manifest")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="evaluation seed")

    p = sub.add_parser("ablate", parents=[common], help="run an ablation grid",
                       epilog=describe_defaults(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--axis", required=True,
                   choices=["components", "layers", "timesteps", "variants"])
    p.add_argument("--envs", default=None,
                   help="comma-separated task list (default: configured env)")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("viz-attn", parents=[common],
                       help="cross-attention heatmaps for the configured condition")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="trained checkpoint (omit for freshly initialized prompts)")
    p.add_argument("--blocks", default="mid", help="comma-separated block ids")
    p.add_argument("--frames", type=int, default=3, help="frames per episode")
    p.add_argument("--per-head", action="store_true", dest="per_head",
                   help="dump per-head maps instead of the head mean")
    p.add_argument("--seed", type=int, default=None)
    return parser


def collect_overrides(args, extra: list[str]) -> dict:
    """--set KEY=VALUE entries plus bare dotted flags (--a.b value)."""
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = parse_value(value)
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, _, value = body.partition("=")
            i += 1
        else:
            key = body
            if "." not in key:
                raise ConfigError(f"unknown flag {token!r}")
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {token!r} needs a value")
            value = extra[i + 1]
            i += 2
        if "." not in key:
            raise ConfigError(f"unknown flag {token!r}")
        overrides[key] = parse_value(value)
    return overrides


def _resolve_config(args, extra, extra_overrides: dict | None = None) -> RunConfig:
    overrides = collect_overrides(args, extra)
    overrides.update(extra_overrides or {})
    if args.out is not None:
        overrides["run.out_dir"] = str(args.out)
    return load_config(args.config, overrides)


def _guard_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(
            f"artifacts already exist under {path}; pass --force to overwrite")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_demos(args, extra) -> int:
    extra_overrides = {}
    if args.env:
        extra_overrides["env.env_id"] = args.env
    if args.n is not None:
        extra_overrides["env.demos"] = args.n
    if args.seed is not None:
        extra_overrides["env.demo_seed"] = args.seed
    cfg = _resolve_config(args, extra, extra_overrides)
    from .runner import ensure_demos

    path = ensure_demos(cfg, auto=True)
    print(f"demo archive: {path}")
    print(f"sha256: {_sha256(path)}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    extra_overrides = {}
    if args.seed is not None:
        extra_overrides["run.seed"] = args.seed
    cfg = _resolve_config(args, extra, extra_overrides)
    from .runner import ensure_demos, execute_run, run_dir_for

    run_dir = run_dir_for(cfg)
    _guard_out_dir(run_dir, args.force)
    ensure_demos(cfg, auto=False)  # dataset must exist before training starts
    result, out_dir = execute_run(
        cfg, timing=args.timing,
        log_fn=lambda epoch, loss: print(f"epoch {epoch:3d}  loss {loss:.5f}"))
    print(f"run dir: {out_dir}")
    print(f"best metric: {result.best_metric:.4f} ({result.metric_kind})")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    from .evaluation import agent_act_fn, evaluate_policy
    from .policy import load_checkpoint, restore_agent
    from .runner import build_agent, build_frozen_stack

    if not args.checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    payload = load_checkpoint(args.checkpoint)
    manifest = payload.get("manifest", {})
    if "config" not in manifest:
        raise ConfigError("checkpoint has no embedded config")
    cfg = RunConfig(manifest["config"])
    overrides = collect_overrides(args, extra)
    if args.episodes is not None:
        overrides["eval.episodes"] = args.episodes
    if overrides:
        cfg = cfg.with_overrides(overrides)
    agent = build_agent(cfg, build_frozen_stack(cfg), cfg["run.seed"])
    restore_agent(agent, payload)
    seed = args.seed if args.seed is not None else cfg["run.seed"]
    metric = evaluate_policy(cfg["env.env_id"], agent_act_fn(agent),
                             n_episodes=cfg["eval.episodes"], seed=seed,
                             obs_stack=cfg["policy.obs.stack"])
    print(f"metric over {cfg['eval.episodes']} episodes: {metric:.4f}")
    return EXIT_OK


def cmd_ablate(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    from .evaluation import make_grid, run_ablation
    from .runner import ensure_demos, execute_run_json

    grid = make_grid(args.axis)
    envs = args.envs.split(",") if args.envs else [cfg["env.env_id"]]
    seeds = [int(s) for s in args.seeds.split(",")]
    out_dir = cfg.out_dir / "ablate" / f"{args.axis}_{cfg.config_hash()}"
    _guard_out_dir(out_dir, args.force)
    if args.workers > 1:
        os.environ.setdefault("ORCA_TORCH_THREADS", "1")
    for env_id in envs:  # shared archives before workers race for them
        ensure_demos(cfg.with_overrides({"env.env_id": env_id}), auto=True)
    results, failures = run_ablation(grid, cfg.as_dict(), execute_run_json,
                                     out_dir, envs=envs, seeds=seeds,
                                     workers=args.workers)
    print((out_dir / "summary.txt").read_text())
    print(f"tables under {out_dir}")
    if failures:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_viz_attn(args, extra) -> int:
    import torch

    from .attention import capture, downsample_mask, emit_heatmaps, grounding_score
    from .envs import make_env
    from .policy import load_checkpoint, restore_agent
    from .runner import build_agent, build_frozen_stack
    from .utils import derive_seed

    overrides = {}
    if args.checkpoint is not None:
        if not args.checkpoint.exists():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        payload = load_checkpoint(args.checkpoint)
        manifest = payload.get("manifest", {})
        if "config" not in manifest:
            raise ConfigError("checkpoint has no embedded config")
        cfg = RunConfig(manifest["config"])
        cli_overrides = collect_overrides(args, extra)
        if args.out is not None:
            cli_overrides["run.out_dir"] = str(args.out)
        if cli_overrides:
            cfg = cfg.with_overrides(cli_overrides)
    else:
        payload = None
        cfg = _resolve_config(args, extra, overrides)

    blocks = tuple(args.blocks.split(","))
    agent = build_agent(cfg, build_frozen_stack(cfg), cfg["run.seed"])
    if payload is not None:
        restore_agent(agent, payload)
    pipeline = agent.pipeline
    backend = pipeline.backend
    env = make_env(cfg["env.env_id"])
    seed = args.seed if args.seed is not None else cfg["env.demo_seed"]

    # replay one expert episode, sampling frames (and masks) along the way
    obs, _ = env.reset(derive_seed("viz", seed) % (2 ** 31))
    frames, masks = [obs], [env.agent_mask()]
    done = False
    while not done:
        obs, _, _, done, _ = env.step(env.expert_action())
        frames.append(obs)
        masks.append(env.agent_mask())
    take = np.unique(np.linspace(0, len(frames) - 1, args.frames).round().astype(int))
    frames = [frames[i] for i in take]
    masks = [masks[i] for i in take]

    out_dir = cfg.out_dir / "viz" / cfg.config_hash()
    _guard_out_dir(out_dir, args.force)
    records, grounding = [], {}
    variant = cfg["condition.variant"]
    with torch.no_grad():
        for fidx, frame in enumerate(frames):
            cond = _condition_for_frame(pipeline, frame)
            recs = capture(backend, frame, cond, block_ids=blocks,
                           config=pipeline.extraction, per_head=args.per_head,
                           frame_index=fidx)
            for rec in recs:
                key = (fidx, f"{rec.block_id}/{rec.token_label}"
                             + (f"/h{rec.head}" if rec.head is not None else ""))
                grounding[key] = grounding_score(
                    rec, downsample_mask(masks[fidx], rec.map_norm.shape))
            records.extend(recs)
    written = emit_heatmaps(records, np.stack(frames), out_dir,
                            env_id=cfg["env.env_id"], variant=variant,
                            grounding=grounding)
    from .config import write_manifest

    write_manifest(out_dir, cfg, blocks=list(blocks), figures=[p.name for p in written])
    print(f"wrote {len(written)} files under {out_dir}")
    return EXIT_OK


def _condition_for_frame(pipeline, frame):
    conditioner = pipeline.conditioner
    variant = pipeline.variant
    if variant == "null":
        return conditioner.encode_null()
    if variant in ("text_simple", "text_caption"):
        return conditioner.encode_text(pipeline.prompt)
    if variant == "coop":
        return conditioner.encode_coop(pipeline.class_text)
    return conditioner.encode_orca(frame)


_COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "viz-attn": cmd_viz_attn,
}


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return _COMMANDS[args.command](args, extra)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} (diagnostics: {exc.manifest_path})",
              file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, FileExistsError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OrcaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
