import hashlib
import json

import numpy as np
import pytest

from orca.errors import AggregationError, ConfigError, ContractViolation
from orca.evaluation import (AblationGrid, RunResult, aggregate, agent_act_fn,
                             apply_axis_value, evaluate_policy, expert_act_fn,
                             make_grid, run_ablation, write_results_csv)

from helpers import build_tiny_agent


def _result(label, env_id="point_reach", seed=0, best=1.0, kind="normalized_score"):
    return RunResult(run_id=f"{label}-{seed}", env_id=env_id,
                     condition_variant="orca", tap_set=("mid",), timestep=0,
                     seed=seed, per_checkpoint=[(10, best / 2), (20, best)],
                     metric_kind=kind, row_label=label)


def test_expert_as_policy_meets_quality_bar():
    metric = evaluate_policy("point_reach", expert_act_fn(), n_episodes=25, seed=0)
    assert metric >= 0.95


def test_random_policy_press_pad_near_zero():
    rng = np.random.default_rng(3)

    def act(frames, proprios, envs):
        return rng.uniform(-1, 1, size=(len(envs), 2))

    metric = evaluate_policy("press_pad", act, n_episodes=25, seed=1)
    assert metric < 0.1


def test_evaluate_policy_deterministic():
    a = evaluate_policy("point_reach", expert_act_fn(), n_episodes=5, seed=7)
    b = evaluate_policy("point_reach", expert_act_fn(), n_episodes=5, seed=7)
    assert a == b


def test_evaluate_policy_with_tiny_agent():
    torch_agent = build_tiny_agent(seed=1)
    # tiny backend renders 16x16, env emits 64x64: wrap with a resize shim
    import numpy as np

    def act(frames, proprios, envs):
        small = frames[:, ::4, ::4, :]
        return torch_agent.act(small, None)

    metric = evaluate_policy("point_reach", act, n_episodes=3, seed=0)
    assert 0.0 <= metric <= 1.0


def test_run_result_best_metric_consistency():
    r = _result("x", best=0.8)
    assert r.best_metric == pytest.approx(0.8)
    with pytest.raises(ContractViolation):
        RunResult(run_id="bad", env_id="point_reach", condition_variant="orca",
                  tap_set=("mid",), timestep=0, seed=0,
                  per_checkpoint=[(10, 0.4)], metric_kind="normalized_score",
                  best_metric=0.9)


def test_run_result_json_roundtrip():
    r = _result("roundtrip", best=0.6)
    again = RunResult.from_json(r.to_json())
    assert again == r


def test_aggregate_hand_case():
    results = [_result("row", seed=s, best=v) for s, v in enumerate((1.0, 2.0, 3.0))]
    rows = aggregate(results)
    assert len(rows) == 1
    mean, std, n = rows[0]["cells"]["point_reach"]
    assert mean == pytest.approx(2.0)
    assert std == pytest.approx(0.8165, abs=1e-4)
    assert n == 3


def test_aggregate_single_seed_zero_std():
    rows = aggregate([_result("solo", best=0.5)])
    assert rows[0]["cells"]["point_reach"][1] == 0.0


def test_aggregate_rejects_mixed_metric_kinds():
    results = [_result("row", seed=0, kind="normalized_score"),
               _result("row", seed=1, kind="success_rate")]
    with pytest.raises(AggregationError):
        aggregate(results)


def test_aggregate_row_mean_across_tasks():
    results = [_result("row", env_id="point_reach", best=0.4),
               _result("row", env_id="press_pad", best=0.8, kind="success_rate")]
    rows = aggregate(results)
    assert rows[0]["mean"] == pytest.approx(0.6)


def test_make_grid_rows():
    assert make_grid("timesteps").values == (200, 100, 0)
    layers = make_grid("layers")
    assert layers.labels == ("down_1", "down_2", "down_3", "mid", "up_0",
                             "up_1", "up_2", "down_1-3, mid")
    assert layers.values[-1] == ("down_1", "down_2", "down_3", "mid")
    comps = make_grid("components")
    assert comps.labels == ("neither", "p_t only", "p_v only", "both")
    assert len(make_grid("variants").values) == 7
    with pytest.raises(ConfigError):
        make_grid("optimizers")


def test_apply_axis_value():
    base = {"run.seed": 0}
    assert apply_axis_value(base, "timesteps", 100)["backbone.timestep"] == 100
    assert apply_axis_value(base, "layers", ("mid",))["backbone.taps"] == ["mid"]
    assert apply_axis_value(base, "components", "null")["condition.variant"] == "null"
    assert base == {"run.seed": 0}  # original untouched


def _fake_job(config):
    seed = config["run.seed"]
    variant = config.get("condition.variant", "orca")
    if variant == "visual_only":
        raise RuntimeError("boom")
    metric = 0.5 + 0.1 * seed
    return RunResult(run_id=f"fake-{variant}-{seed}", env_id=config["env.env_id"],
                     condition_variant=variant,
                     tap_set=tuple(config.get("backbone.taps", ("mid",))),
                     timestep=config.get("backbone.timestep", 0), seed=seed,
                     per_checkpoint=[(10, metric)],
                     metric_kind="normalized_score").to_json()


def test_run_ablation_tables_and_failures(tmp_path):
    grid = make_grid("components")
    results, failures = run_ablation(grid, {"env.env_id": "point_reach"}, _fake_job,
                                     tmp_path, envs=["point_reach"], seeds=[0, 1],
                                     workers=1)
    assert len(results) == 6  # 4 rows x 2 seeds minus 2 failing cells
    assert len(failures) == 2
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "row,point_reach,mean"
    assert [line.split(",")[0] for line in summary[1:]] == \
        ["neither", "p_t only", "p_v only", "both"]
    assert "FAILED" in summary[3]
    assert (tmp_path / "summary.txt").exists()
    assert (tmp_path / "summary.png").exists()
    assert (tmp_path / "results.csv").exists()
    cells = list((tmp_path / "cells").glob("*.json"))
    assert len(cells) == 8  # populated or failure-annotated, never missing


def test_results_csv_row_per_checkpoint(tmp_path):
    write_results_csv([_result("row", best=0.8)], tmp_path / "results.csv")
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0] == ("run_id,env_id,variant,tap_set,timestep,seed,epoch,"
                       "metric,best_metric")
    assert len(lines) == 3  # two checkpoints for the single run


def test_grid_contract():
    with pytest.raises(ConfigError):
        AblationGrid("layers", (), ())
    with pytest.raises(ConfigError):
        AblationGrid("layers", (1, 2), ("a", "a"))
