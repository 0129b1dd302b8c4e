"""Command-line surface: exit codes, configs, checkpoints, artifacts."""

import json

import numpy as np
import pytest

from simba import checkpoint as ckpt
from simba import cli
from simba import config as C
from simba import data as D
from simba import tensor as T
from simba.errors import ConfigError
from simba.rng import substream
from simba.tensor import Tensor


def write_config(tmp_path, name="run.json", **updates):
    cfg = {
        "task": "forecast",
        "seed": 0,
        "out_dir": str(tmp_path / "out"),
        "model": {"dim": 8, "depth": 1, "einfft_blocks": 2, "dtype": "real32"},
        "optim": {
            "total_epochs": 2,
            "max_steps": 6,
            "batch_size": 16,
            "grad_clip_norm": 1.0,
            "eval_each_epoch": False,
        },
        "data": {"synthetic_series": {"channels": 3, "total_len": 700, "lookback": 24, "horizon": 12}},
    }
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_train_then_eval_reproduces_final_metrics(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert cli.main(["train", "--config", cfg_path, "--quiet"]) == 0
    out = tmp_path / "out"
    assert (out / "ckpt_final.json").exists()
    assert (out / "ckpt_final.bin").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "summary.txt").exists()

    rows = (out / "metrics.csv").read_text().splitlines()
    test_rows = {r.split(",")[2]: float(r.split(",")[3]) for r in rows if ",test," in r}

    capsys.readouterr()
    assert cli.main(["eval", "--config", cfg_path, "--checkpoint", str(out / "ckpt_final")]) == 0
    printed = capsys.readouterr().out
    mse = float(printed.split("mse=")[1].split()[0])
    mae = float(printed.split("mae=")[1].split()[0])
    assert mse == test_rows["mse"] and mae == test_rows["mae"]


def test_train_zero_epochs_writes_checkpoint(tmp_path):
    cfg_path = write_config(tmp_path, optim={"total_epochs": 0, "max_steps": None})
    assert cli.main(["train", "--config", cfg_path, "--quiet"]) == 0
    assert (tmp_path / "out" / "ckpt_final.json").exists()


def test_same_seed_runs_produce_identical_metrics_csv(tmp_path):
    cfg_a = write_config(tmp_path, name="a.json", out_dir=str(tmp_path / "a"))
    cfg_b = write_config(tmp_path, name="b.json", out_dir=str(tmp_path / "b"))
    assert cli.main(["train", "--config", cfg_a, "--quiet"]) == 0
    assert cli.main(["train", "--config", cfg_b, "--quiet"]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b


def test_seed_override_changes_run(tmp_path):
    cfg_a = write_config(tmp_path, name="a.json", out_dir=str(tmp_path / "a"))
    cfg_b = write_config(tmp_path, name="b.json", out_dir=str(tmp_path / "b"))
    assert cli.main(["train", "--config", cfg_a, "--quiet"]) == 0
    assert cli.main(["train", "--config", cfg_b, "--seed", "9", "--quiet"]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a != b


def test_malformed_json_exit_2_with_byte_offset(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "forecast", ')
    assert cli.main(["train", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "byte offset" in err


def test_unknown_field_exit_2_with_path(tmp_path, capsys):
    cfg_path = write_config(tmp_path, optim={"learning_rate": 3})
    assert cli.main(["train", "--config", cfg_path]) == 2
    assert "optim.learning_rate" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    cfg_path = write_config(tmp_path, data={"csv": {"path": str(tmp_path / "no.csv")},
                                            "synthetic_series": None})
    # two data sources -> config error
    assert cli.main(["train", "--config", cfg_path]) == 2


def test_two_data_sources_rejected():
    raw = {
        "task": "forecast",
        "data": {
            "synthetic_series": {"channels": 2, "total_len": 100},
            "csv": {"path": "x.csv"},
        },
    }
    with pytest.raises(ConfigError) as e:
        C.validate_run_config(raw)
    assert "exactly one data source" in str(e.value)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    from simba.model import ForecastConfig, ForecastModel

    cfg = ForecastConfig(num_channels=3, lookback=24, horizon=12, dim=8,
                         depth=1, einfft_blocks=2, dtype="real32")
    model = ForecastModel(cfg, substream(4, "init"))
    model.standardization = {"mean": [0.0, 1.0, 2.0], "std": [1.0, 2.0, 3.0]}
    stem = str(tmp_path / "ck")
    ckpt.save_checkpoint(stem, model, step=17, rng_states={"data": {"x": 1}})
    loaded, manifest = ckpt.load_checkpoint(stem)
    assert manifest["step"] == 17
    assert manifest["task"] == "forecast"
    x = np.random.default_rng(0).uniform(-1, 1, (2, 24, 3))
    with T.no_grad():
        y1 = model.forward(Tensor(x, dtype="real32")).numpy()
        y2 = loaded.forward(Tensor(x, dtype="real32")).numpy()
    assert np.array_equal(y1, y2)
    assert loaded.standardization == model.standardization


def test_checkpoint_detects_mismatched_index(tmp_path):
    from simba import container
    from simba.model import ForecastConfig, ForecastModel

    cfg = ForecastConfig(num_channels=2, lookback=8, horizon=4, dim=8,
                         depth=1, einfft_blocks=2, dtype="real32")
    model = ForecastModel(cfg, substream(5, "init"))
    stem = str(tmp_path / "ck")
    ckpt.save_checkpoint(stem, model)
    manifest, arrays = container.load_arrays(stem)
    del arrays["embed.w"]
    container.save_arrays(stem, arrays, extra={k: v for k, v in manifest.items()
                                               if k not in ("format_version", "arrays", "blob_bytes")})
    with pytest.raises(D.DataError):
        ckpt.load_checkpoint(stem)


def test_forecast_command_writes_prediction_csv(tmp_path):
    cfg_path = write_config(tmp_path)
    assert cli.main(["train", "--config", cfg_path, "--quiet"]) == 0
    csv_in = tmp_path / "input.csv"
    rng = np.random.default_rng(3)
    rows = ["date,x,y,z"]
    for i in range(30):
        rows.append(f"d{i}," + ",".join(f"{v:.4f}" for v in rng.normal(size=3)))
    csv_in.write_text("\n".join(rows) + "\n")
    out_csv = tmp_path / "pred.csv"
    code = cli.main([
        "forecast", "--config", cfg_path, "--checkpoint", str(tmp_path / "out" / "ckpt_final"),
        "--input-csv", str(csv_in), "--out-csv", str(out_csv), "--quiet",
    ])
    assert code == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "x,y,z"
    assert len(lines) == 1 + 12  # header + horizon rows
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert values.shape == (12, 3) and np.isfinite(values).all()


def test_forecast_command_is_idempotent(tmp_path):
    cfg_path = write_config(tmp_path)
    cli.main(["train", "--config", cfg_path, "--quiet"])
    csv_in = tmp_path / "input.csv"
    rng = np.random.default_rng(3)
    rows = ["date,x,y,z"] + [
        f"d{i}," + ",".join(f"{v:.4f}" for v in rng.normal(size=3)) for i in range(26)
    ]
    csv_in.write_text("\n".join(rows) + "\n")
    args = ["forecast", "--config", cfg_path, "--checkpoint", str(tmp_path / "out" / "ckpt_final"),
            "--input-csv", str(csv_in), "--out-csv", str(tmp_path / "p.csv"), "--quiet"]
    assert cli.main(args) == 0
    first = (tmp_path / "p.csv").read_bytes()
    assert cli.main(args) == 0
    assert (tmp_path / "p.csv").read_bytes() == first


def test_gradcheck_command_exit_codes(capsys):
    assert cli.main(["gradcheck", "--scope", "soft_shrink"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "max_rel_err" in out
    assert cli.main(["gradcheck", "--scope", "not-a-scope"]) == 2


def test_gradcheck_einfft_scope_covers_gating_path(capsys):
    assert cli.main(["gradcheck", "--scope", "einfft"]) == 0
    assert "einfft" in capsys.readouterr().out


def test_bench_command_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert cli.main(["bench", "--suite", "einfft", "--sizes", "64,128",
                     "--out", str(out), "--quiet"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "suite,case,size,seconds,flops"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 4
    emm = {int(r[2]): int(r[4]) for r in rows if r[1] == "emm"}
    dense = {int(r[2]): int(r[4]) for r in rows if r[1] == "dense"}
    for c in (64, 128):
        assert emm[c] * 4 == dense[c]  # analytic FLOP ratio exactly 1/Cb


def test_bench_bad_sizes_exit_2():
    assert cli.main(["bench", "--suite", "einfft", "--sizes", "a,b"]) == 2


def test_gen_data_deterministic_and_summarized(tmp_path, capsys):
    cfg = {
        "task": "vision",
        "seed": 11,
        "out_dir": str(tmp_path / "d1"),
        "data": {"synthetic_images": {"classes": 4, "per_class": 20}},
    }
    p = tmp_path / "gen.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["gen-data", "--config", str(p)]) == 0
    printed = capsys.readouterr().out
    assert "nearest-centroid baseline" in printed
    assert cli.main(["gen-data", "--config", str(p), "--out", str(tmp_path / "d2"), "--quiet"]) == 0
    b1 = (tmp_path / "d1" / "dataset.bin").read_bytes()
    b2 = (tmp_path / "d2" / "dataset.bin").read_bytes()
    assert b1 == b2

    loaded = D.ImageDataset.load(str(tmp_path / "d1" / "dataset"))
    assert len(loaded) == 80


def test_gen_data_invalid_spec_exit_2(tmp_path, capsys):
    p = tmp_path / "gen.json"
    p.write_text(json.dumps({"task": "vision", "data": {"synthetic_images": {"classes": 4}}}))
    assert cli.main(["gen-data", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "per_class" in capsys.readouterr().err


def test_blob_data_source_roundtrip(tmp_path):
    ds = D.gen_synthetic_series(0, 3, 700, lookback=24, horizon=12)
    stem = str(tmp_path / "series")
    ds.save(stem)
    cfg_path = write_config(tmp_path, data={"blob": {"stem": stem}, "synthetic_series": None})
    raw = json.loads(open(cfg_path).read())
    del raw["data"]["synthetic_series"]
    open(cfg_path, "w").write(json.dumps(raw))
    assert cli.main(["train", "--config", cfg_path, "--quiet"]) == 0


def test_cli_usage_error_exit_2():
    assert cli.main(["train"]) == 2  # missing --config
    assert cli.main(["no-such-command"]) == 2


def test_checkpoint_cadence(tmp_path):
    cfg_path = write_config(tmp_path, optim={"total_epochs": 3, "max_steps": None,
                                             "checkpoint_every_epochs": 1})
    assert cli.main(["train", "--config", cfg_path, "--quiet"]) == 0
    assert (tmp_path / "out" / "ckpt_epoch1.json").exists()
    assert (tmp_path / "out" / "ckpt_epoch2.json").exists()
    assert (tmp_path / "out" / "ckpt_final.json").exists()


def test_worker_env_var_parallel_audit(monkeypatch):
    from simba import audit

    monkeypatch.setenv("SIMBA_THREADS", "4")
    assert audit.worker_count() == 4
    results = dict(audit.run_audit("ssm", seed=0))
    assert set(results) == {"conv1d_depthwise", "selective_scan", "mamba_block"}
    assert all(err < audit.TOLERANCE for err in results.values())
    monkeypatch.setenv("SIMBA_THREADS", "junk")
    assert audit.worker_count() == 1


def test_forecast_task_defaults_to_grad_clipping():
    raw = {
        "task": "forecast",
        "data": {"synthetic_series": {"channels": 2, "total_len": 400}},
    }
    cfg = C.validate_run_config(raw)
    assert cfg.optim.grad_clip_norm == 1.0
    raw["optim"] = {"grad_clip_norm": None}
    assert C.validate_run_config(raw).optim.grad_clip_norm is None
