"""Calibration driver for the desk-scale ordering check (dev tool, not shipped)."""
import json
import os
import sys
import time
from pathlib import Path


def main():
    os.environ["ORCA_TORCH_THREADS"] = "1"
    import torch
    torch.set_num_threads(2)

    from orca.config import RunConfig
    from orca.evaluation import make_grid, run_ablation
    from orca.runner import ensure_demos, execute_run_json, prepare_pretrained_backbone

    out = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/calib")
    seeds = [int(s) for s in (sys.argv[2] if len(sys.argv) > 2 else "0,1").split(",")]
    pretrain_steps = int(sys.argv[3]) if len(sys.argv) > 3 else 400

    t0 = time.time()
    cache = out / f"pretrained_toy_{pretrain_steps}.pt"
    prepare_pretrained_backbone(cache, env_id="point_reach", steps=pretrain_steps, seed=0)
    print(f"pretrained backbone ready in {time.time()-t0:.0f}s -> {cache}", flush=True)

    cfg = RunConfig({
        "backbone.checkpoint_path": str(cache),
        "run.out_dir": str(out),
    })
    ensure_demos(cfg, auto=True)
    grid = make_grid("components")
    t0 = time.time()
    results, failures = run_ablation(grid, cfg.as_dict(), execute_run_json,
                                     out / "grid", envs=["point_reach"], seeds=seeds,
                                     workers=2)
    print(f"grid done in {(time.time()-t0)/60:.1f} min; failures: {failures}", flush=True)

    by_label = {}
    for r in results:
        by_label.setdefault(r.row_label, []).append(r.best_metric)
    summary = {lab: (sum(v) / len(v), v) for lab, v in by_label.items()}
    print(json.dumps(summary, indent=2))
    (out / "calib_summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
