import json

import numpy as np
import pytest

from agcnet.cli import main
from agcnet.config import RunConfig
from agcnet.model import read_checkpoint
from agcnet.runner import read_dataset

SMALL = dict(k=2, layers=1, enc_channels=4, hidden=6, dim_s=4, rank=2, h=6, p=3, epochs=2, batch_size=32,
             synth_nodes=6, synth_steps=300)


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    RunConfig(**SMALL).save(path)
    return path


@pytest.fixture
def data(tmp_path, config):
    out = tmp_path / "data"
    assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_synth_writes_consistent_files(tmp_path, config, data):
    graph, table = read_dataset(data)
    assert graph.node_count == 6 and table.values.shape == (300, 6)
    assert RunConfig.load(data / "config.json") == RunConfig(**SMALL)
    again = tmp_path / "again"
    main(["synth", "--config", str(config), "--out", str(again)])
    for name in ("adjacency.csv", "signals.csv", "meta.txt", "nodes.txt"):
        assert (data / name).read_bytes() == (again / name).read_bytes()


def test_synth_cycle_option(tmp_path):
    cfg = tmp_path / "c.json"
    RunConfig(**{**SMALL, "synth_graph": "cycle", "synth_nodes": 4}).save(cfg)
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")])
    graph, _ = read_dataset(tmp_path / "d")
    assert sorted(tuple(sorted((int(a), int(b)))) for a, b, _ in graph.edges) == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_train_eval_and_reproducibility(tmp_path, config, data, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run)]) == 0
    for name in ("config.json", "init.ckpt", "best.ckpt", "history.jsonl", "final.json"):
        assert (run / name).exists()
    history = [json.loads(line) for line in (run / "history.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in history] == [1, 2]

    # rerunning from the config echo reproduces the history and checkpoint
    run2 = tmp_path / "run2"
    main(["train", "--config", str(run / "config.json"), "--data", str(data), "--out", str(run2)])
    strip = lambda p: [{k: v for k, v in json.loads(l).items() if k != "seconds"} for l in p.read_text().splitlines()]
    assert strip(run / "history.jsonl") == strip(run2 / "history.jsonl")
    assert (run / "best.ckpt").read_bytes() == (run2 / "best.ckpt").read_bytes()

    capsys.readouterr()
    assert main(["eval", "--run", str(run), "--data", str(data), "--out", str(tmp_path / "ev")]) == 0
    text = capsys.readouterr().out
    assert "persistence" in text.lower()
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert set(report) == {"model", "baseline", "summary"}
    main(["eval", "--run", str(run), "--data", str(data), "--out", str(tmp_path / "ev2")])
    assert (tmp_path / "ev" / "report.json").read_bytes() == (tmp_path / "ev2" / "report.json").read_bytes()
    assert main(["eval", "--run", str(run), "--data", str(data), "--horizons", "5"]) == 2


def test_train_refuses_mismatched_rerun(tmp_path, config, data):
    run = tmp_path / "run"
    main(["train", "--config", str(config), "--data", str(data), "--out", str(run)])
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run), "--seed", "5"]) == 2


def test_train_zero_lr_keeps_init(tmp_path, data):
    cfg = tmp_path / "lr0.json"
    RunConfig(**{**SMALL, "lr": 0.0, "weight_decay": 0.0}).save(cfg)
    run = tmp_path / "run"
    main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)])
    init = read_checkpoint(run / "init.ckpt")[1]
    best = read_checkpoint(run / "best.ckpt")[1]
    assert init.keys() == best.keys()
    for name in init:
        np.testing.assert_array_equal(init[name], best[name])


def test_train_rejects_node_mismatch(tmp_path, config, data):
    lines = (data / "adjacency.csv").read_text().splitlines()
    (data / "adjacency.csv").write_text("\n".join(lines + ["6,7,1.0"]) + "\n")
    (data / "nodes.txt").write_text((data / "nodes.txt").read_text())
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(tmp_path / "r")]) == 2


def test_bad_config_key_exits_nonzero(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["gradcheck", "--config", str(cfg)]) == 2


def test_gradcheck_passes_and_fails(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for name in ("scale_set.raw_params", "layers.0.shift.l1", "decoder.w_r", "head.weight"):
        assert name in out
    assert main(["gradcheck", "--corrupt", "2"]) == 1


def test_ablate_emits_rows(tmp_path, config, data):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(config), "--data", str(data), "--out", str(out), "--seeds", "2"]) == 0
    rep = json.loads((out / "ablation.json").read_text())
    assert [r["setting"] for r in rep["settings"]] == ["c", "d", "e"]
    seeds = {s: [r["seed"] for r in runs] for s, runs in rep["per_seed"].items()}
    assert seeds["c"] == seeds["d"] == seeds["e"] == [0, 1]
    assert RunConfig.load(out / "setting_e" / "seed_0" / "config.json").shift
    assert not RunConfig.load(out / "setting_c" / "seed_0" / "config.json").shift


def fake_run(path, mae):
    path.mkdir(parents=True)
    (path / "final.json").write_text(json.dumps({"test_mae": mae}))
    return str(path)


def test_ttest(tmp_path, capsys):
    a = [fake_run(tmp_path / f"a{i}", m) for i, m in enumerate([1.0, 1.1, 0.9])]
    b = [fake_run(tmp_path / f"b{i}", m) for i, m in enumerate([5.0, 5.1, 4.9])]
    assert main(["ttest", "--a", *a, "--b", *b, "--out", str(tmp_path / "t")]) == 0
    res = json.loads((tmp_path / "t" / "ttest.json").read_text())
    assert res["p"] < 0.001 and res["A"]["mae"] == [1.0, 1.1, 0.9]
    assert main(["ttest", "--a", *a, "--b", *a]) == 0
    assert "p = 1" in capsys.readouterr().out
    assert main(["ttest", "--a", a[0], "--b", *b]) == 2
    assert main(["ttest", "--a", str(tmp_path / "missing"), a[0], "--b", *b]) == 2
