from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from physlaw.datagen import read_manifest
from physlaw.datagen import splits as sp
from physlaw.labcli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, svg
from physlaw.labcli.config import ConfigError, ExperimentConfig, load_config, parse_text
from physlaw.physim import ScenarioSpec


# -- config ------------------------------------------------------------------------

def test_config_parsing(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment\nscenario = collision\nn = 12   # inline\nflip = true\nlr = 3e-4\n", encoding="utf-8")
    cfg = load_config(str(p), {"n": "20", "seed": None})
    assert (cfg.scenario, cfg.n, cfg.flip, cfg.lr) == ("collision", 20, True, 3e-4)
    assert parse_text(cfg.to_text()) == {k: v for k, v in vars(cfg).items()}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_text("scenraio = uniform\n")
    with pytest.raises(ConfigError):
        parse_text("n = many\n")
    with pytest.raises(ConfigError):
        parse_text("just words\n")


def test_overfit_preset_fills_unset_keys(tmp_path):
    cfg = load_config(None, {"preset": "overfit"})
    assert (cfg.n, cfg.steps, cfg.lr, cfg.warmup, cfg.model, cfg.res) == (16, 2000, 1e-3, 100, "nano", 32)
    p = tmp_path / "exp.cfg"
    p.write_text("preset = overfit\nsteps = 300\n", encoding="utf-8")
    cfg = load_config(str(p), {"lr": "5e-4"})
    assert (cfg.steps, cfg.lr, cfg.n) == (300, 5e-4, 16)
    with pytest.raises(ConfigError):
        load_config(None, {"preset": "huge"})


def test_unknown_key_exit_code(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("colour = red\n")
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "d")]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["gen", "--scenario", "uniform", "--split", "ood:level9", "--out", str(tmp_path / "x")]) == EXIT_USAGE


# -- gen ---------------------------------------------------------------------------

def test_gen_counts(tmp_path):
    out = tmp_path / "id"
    assert main(["gen", "--scenario", "uniform", "--split", "id", "--n", "20", "--res", "32",
                 "--out", str(out)]) == EXIT_OK
    man = read_manifest(out)
    assert len(man.episodes) == 20 and man.resolution == 32


def test_gen_collision_ood_level3(tmp_path):
    out = tmp_path / "ood"
    assert main(["gen", "--scenario", "collision", "--split", "ood:level3", "--n", "6", "--out", str(out)]) == EXIT_OK
    for spec in read_manifest(out).specs():
        for r in ("r1", "r2"):
            assert not sp.in_domain(spec.params[r], sp.ID_R)
        for v in ("v1", "v2"):
            assert sp.in_domain(spec.params[v], sp.ID_V)


def test_gen_combo_train_templates(tmp_path):
    out = tmp_path / "combo"
    assert main(["gen", "--scenario", "combo", "--split", "train", "--n", "1", "--frames", "4",
                 "--out", str(out)]) == EXIT_OK
    man = read_manifest(out)
    assert len({tuple(e.spec["params"]["template"]) for e in man.episodes}) == 60


def test_gen_flip_adds_mirrors(tmp_path):
    out = tmp_path / "flip"
    assert main(["gen", "--n", "4", "--flip", "--out", str(out)]) == EXIT_OK
    specs = read_manifest(out).specs()
    dirs = [s.params.get("direction", 1.0) for s in specs]
    assert len(specs) == 8 and dirs.count(-1.0) == 4


def test_gen_gap_and_squares(tmp_path):
    assert main(["gen", "--split", "gap:1.0-1.25,3.75-4.0", "--n", "9", "--out", str(tmp_path / "g")]) == EXIT_OK
    assert all(not 1.25 < s.params["v"] < 3.75 for s in read_manifest(tmp_path / "g").specs())
    assert main(["gen", "--scenario", "collision", "--split", "gap:1.5-3.5/1.5-3.5", "--n", "5",
                 "--out", str(tmp_path / "s")]) == EXIT_OK


# -- train / sample / eval / report ----------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data = root / "data"
    assert main(["gen", "--n", "4", "--frames", "4", "--out", str(data)]) == 0
    cfg = root / "train.cfg"
    cfg.write_text(f"data = {data}\nout = {root / 'train'}\nsteps = 4\nbatch = 2\nc = 1\nframes = 4\n"
                   "strict = true\nsample_steps = 2\n")
    assert main(["train", "--config", str(cfg)]) == 0
    return root, data, cfg


def test_train_outputs(tiny_run):
    root, _, _ = tiny_run
    rows = list(csv.reader(open(root / "train" / "train_log.csv")))
    assert rows[0] == ["step", "loss", "lr", "wall_time"]
    assert (root / "train" / "model.phyw").exists()
    assert "steps = 4" in (root / "train" / "config.txt").read_text()


def test_resume_matches_straight_run(tmp_path, tiny_run):
    from physlaw.stdit import SpacetimeDiT

    _, data, _ = tiny_run
    base = ["--data", str(data), "--frames", "4", "--c", "1", "--batch", "2", "--strict", "--steps", "6"]
    assert main(["train", *base, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", *base, "--stop-after", "3", "--out", str(tmp_path / "b")]) == 0
    assert main(["train", *base, "--resume", "--out", str(tmp_path / "b")]) == 0
    m_a, _ = SpacetimeDiT.load(tmp_path / "a" / "model.phyw")
    m_b, _ = SpacetimeDiT.load(tmp_path / "b" / "model.phyw")
    for k, p in m_a.parameters().items():
        assert p.data.tobytes() == m_b.parameters()[k].data.tobytes()
    last = lambda d: list(csv.reader(open(tmp_path / d / "train_log.csv")))[-1][:3]
    assert last("a") == last("b")


@pytest.mark.slow
def test_overfit_preset_loss_drops(tmp_path):
    assert main(["gen", "--preset", "overfit", "--out", str(tmp_path / "data")]) == 0
    assert main(["train", "--preset", "overfit", "--data", str(tmp_path / "data"),
                 "--out", str(tmp_path / "run")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "train_log.csv")))
    assert int(rows[-1]["step"]) == 2000
    loss = np.array([float(r["loss"]) for r in rows])
    # logged every 10 steps; five rows on each end smooth the per-step noise
    assert loss[-5:].mean() < 0.1 * loss[:5].mean()


def test_eval_and_report(tmp_path, tiny_run):
    root, data, _ = tiny_run
    ck = root / "train" / "model.phyw"
    ev = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--checkpoint", str(ck), "--c", "1", "--frames", "4",
                 "--sample-steps", "2", "--out", str(ev)]) == EXIT_OK
    summary = json.loads((ev / "summary.json").read_text())
    assert summary["n"] == 4 and "mean_e" in summary and "baseline_e" in summary
    rows = list(csv.DictReader(open(ev / "eval.csv")))
    assert len(rows) == 4 and {"id", "e", "psnr", "abnormal", "v", "r"} <= set(rows[0])
    assert (ev / "bins.csv").exists()
    ET.fromstring((ev / "bins.svg").read_text())

    ev2 = tmp_path / "ev2"
    ev2.mkdir()
    (ev2 / "summary.json").write_text(json.dumps({**summary, "mean_e": 0.5}))
    rep = tmp_path / "rep"
    assert main(["report", str(ev), str(ev2), "--out", str(rep)]) == EXIT_OK
    ET.fromstring((rep / "error.svg").read_text())
    assert len(list(csv.reader(open(rep / "runs.csv")))) == 3


def test_sample_writes_videos(tmp_path, tiny_run):
    root, data, _ = tiny_run
    assert main(["sample", "--data", str(data), "--checkpoint", str(root / "train" / "model.phyw"), "--c", "1",
                 "--frames", "4", "--sample-steps", "2", "--out", str(tmp_path / "s")]) == EXIT_OK
    assert len(list((tmp_path / "s" / "samples").glob("*.phyv"))) == 4


def test_report_empty_is_data_error(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert json.loads((tmp_path / "r" / "summary.json").read_text())["status"] == "no data"


def test_attribute_report_table(tmp_path):
    run = tmp_path / "attr"
    run.mkdir()
    (run / "summary.json").write_text(json.dumps({
        "scenario": "uniform", "split": "test", "n": 4, "mean_e": 0.1, "pair": ["color", "shape"],
        "outcomes": {"kept both": 1, "kept color": 2, "kept neither": 1}}))
    assert main(["report", str(run), "--out", str(tmp_path / "r")]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "r" / "outcomes_attr.csv")))
    assert rows == [["", "shape kept", "shape changed"], ["color kept", "1", "2"], ["color changed", "0", "1"]]


def test_data_errors(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "none.phyw"),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_numeric_failure_exit(tmp_path, tiny_run, monkeypatch):
    _, data, _ = tiny_run
    from physlaw import diffcore as dc

    def boom(*a, **k):
        raise dc.NonFiniteLoss(np.array([5]), 1)

    monkeypatch.setattr(dc, "train", boom)
    assert main(["train", "--data", str(data), "--frames", "4", "--c", "1", "--out", str(tmp_path / "o")]) \
        == EXIT_NUMERIC


# -- svg -------------------------------------------------------------------------------

def test_svg_charts_are_valid_xml():
    for doc in (svg.bar_chart(["1K", "10K"], [0.2, float("nan")], "ID error <&>", "e"),
                svg.line_chart({"a": ([1, 2, 3], [0.1, 0.3, 0.2])}, "curve", "v", "e"),
                svg.heatmap([1, 2], [1, 2], [[0.1, float("nan")], [0.2, 0.4]], "heat")):
        root = ET.fromstring(doc)
        assert root.tag.endswith("svg")
