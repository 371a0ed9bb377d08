"""Smoke tests for the python bindings. Runnable directly or under pytest."""

import json
import math
import tempfile
from pathlib import Path

import budgetformer as bf


def test_schedule_pins():
    cfg = bf.ScheduleConfig()
    cfg.total_steps = 1000
    assert bf.noise_scale(0, cfg) == 0.5
    assert bf.noise_scale(1000, cfg) == 0.0
    assert bf.temperature(0, cfg) == 2.0
    assert abs(bf.temperature(1000, cfg) - 0.11280) <= 1e-5
    assert bf.entropy_coefficient(0, cfg) == -0.05
    assert bf.entropy_coefficient(500, cfg) == 0.0
    assert bf.entropy_coefficient(1000, cfg) == 0.05


def test_loss_values():
    cfg = bf.BudgetLossConfig()
    assert bf.budget_loss(0.5, cfg) == 0.0
    assert abs(bf.budget_loss(0.0, cfg) - 5.0e-4) <= 1e-12
    assert bf.budget_violation(0.95, cfg) > 0.0
    assert bf.budget_loss_derivative(0.5, cfg) == 0.0

    sched = bf.ScheduleConfig()
    sched.total_steps = 1000
    uniform = [1.0 / 8.0] * 8
    got = bf.entropy_loss(uniform, 0, sched, bf.SignMode.as_written)
    assert abs(got - 0.10397) <= 1e-5


def test_head_selection():
    k, mask = bf.select_top_k([0.4, 0.3, 0.2, 0.1], 0.6)
    assert k == 2
    assert mask == [1, 1, 0, 0]
    weights = bf.head_weights(0.5, [0.25] * 4)
    assert all(abs(w - 0.5) <= 1e-12 for w in weights)


def test_cost_model():
    proj_k, attn_k = bf.attention_flops(2, 16, 32, 4, 1)
    proj_h, attn_h = bf.attention_flops(2, 16, 32, 4, 4)
    assert proj_k == proj_h
    assert attn_k / attn_h == 1.0 / 4.0
    assert bf.inference_ratio([1, 3], 4) == 0.5
    assert bf.attention_memory(2, 16, 2) == 2 * 2 * 16 * 16
    assert bf.budget_net_flops(1, 32, 4) > 0
    assert bf.carbon_proxy(1000.0, 0.002) == 2.0


def test_errors_map_to_python_types():
    try:
        bf.train_run(json.dumps({"not_a_key": 1}))
    except ValueError as err:
        assert "not_a_key" in str(err)
    else:
        raise AssertionError("unknown config key should raise")

    try:
        bf.select_top_k([0.5, 0.5], 1.5)
    except bf.ContractError as err:
        assert isinstance(err, RuntimeError)
    else:
        raise AssertionError("budget outside (0,1) should raise")


def test_train_eval_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        out_dir = Path(tmp) / "run"
        config = json.dumps(
            {
                "vocab_size": 64,
                "max_seq_len": 16,
                "model_dim": 16,
                "heads": 4,
                "layers": 1,
                "classes": 2,
                "task": "keyword",
                "train_examples": 24,
                "val_examples": 8,
                "epochs": 1,
                "batch_size": 8,
                "seed": 5,
                "output_dir": str(out_dir),
            }
        )
        run = bf.train_run(config)
        assert not run["diverged"]
        assert 0.0 <= run["best_val_accuracy"] <= 1.0
        assert (out_dir / "metrics.jsonl").exists()
        assert (out_dir / "resolved_config.json").exists()
        assert Path(run["last_checkpoint"]).exists()

        report = bf.eval_run(run["last_checkpoint"], config)
        assert report["examples"] == 8
        assert 0.0 < report["ratio_attention"] <= 1.0
        assert report["mean_k"] >= 1.0


if __name__ == "__main__":
    test_schedule_pins()
    test_loss_values()
    test_head_selection()
    test_cost_model()
    test_errors_map_to_python_types()
    test_train_eval_roundtrip()
    print("smoke tests passed")
