import json

import numpy as np
import pytest

from sdfkit.cli import main
from sdfkit.config import RunConfig, merge
from sdfkit.features import read_features_csv
from sdfkit.synth import SynthSpec, generate


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-subjects", "10", "--channels", "CP1,CPz,CP2", "--seed", "3",
                 "-o", str(d)]) == 0
    return d / "manifest.json"


FAST = ["--m-grid", "10", "--level-step", "10"]


def _one_subject_manifest(manifest, tmp_path):
    doc = json.loads(manifest.read_text())
    doc["subjects"] = doc["subjects"][:1]
    for s in doc["subjects"]:
        s["files"]["erp"] = str(manifest.parent / s["files"]["erp"])
    p = tmp_path / "one.json"
    p.write_text(json.dumps(doc))
    return p


# -------------------------------------------------------------------- synth

def test_synth_same_seed_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--n-subjects", "4", "--seed", "7", "-o", str(d)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert "manifest.json" in files and len(files) == 5
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_synth_seed_changes_data():
    x = generate(SynthSpec(n_subjects=4, seed=1))[0].erps["target"]
    y = generate(SynthSpec(n_subjects=4, seed=2))[0].erps["target"]
    assert not np.array_equal(x, y)


def test_synth_header_and_groups(dataset):
    text = (dataset.parent / "sub-001.csv").read_text()
    assert text.startswith("# sdfkit ")
    assert "# config_hash " in text
    doc = json.loads(dataset.read_text())
    groups = [s["group"] for s in doc["subjects"]]
    assert groups.count("PD") == groups.count("CTL") == 5


# ---------------------------------------------------------------- decompose

def test_decompose_three_level_records(dataset, tmp_path):
    one = _one_subject_manifest(dataset, tmp_path)
    out = tmp_path / "out"
    args = ["decompose", "--manifest", str(one), "--channels", "CPz", "--m-grid", "10",
            "--level-step", "50", "-o", str(out)]
    assert main(args) == 0
    lines = (out / "vms_archive.jsonl").read_text().splitlines()
    head = json.loads(lines[0])["header"]
    assert head["content"] == "vms-archive" and len(head["config_hash"]) == 16
    recs = [json.loads(x) for x in lines[1:]]
    assert [r["level"] for r in recs] == [100.0, 50.0, 0.0]
    assert recs[0]["U"] == [] and recs[0]["x0"] == []
    first = (out / "vms_archive.jsonl").read_bytes()
    assert main(args) == 0
    assert (out / "vms_archive.jsonl").read_bytes() == first


def test_features_resume_from_archive(dataset, tmp_path):
    one = _one_subject_manifest(dataset, tmp_path)
    out = tmp_path / "out"
    common = ["--manifest", str(one), "--channels", "CPz"] + FAST + ["-o", str(out)]
    assert main(["features"] + common) == 0
    direct = (out / "features.csv").read_bytes()
    (out / "features.csv").unlink()
    assert main(["decompose"] + common) == 0
    assert main(["features"] + common) == 0
    assert (out / "features.csv").read_bytes() == direct


# ----------------------------------------------------------- end to end

@pytest.fixture(scope="module")
def evaluated(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    args = ["evaluate", "--manifest", str(dataset)] + FAST + ["--cv", "kfold:5x3", "-o", str(out)]
    assert main(args) == 0
    return out


def test_feature_table(evaluated):
    vecs = read_features_csv(evaluated / "features.csv")
    assert len(vecs) == 10 * 3 * 10
    assert {v.level for v in vecs} == {float(x) for x in range(90, -1, -10)}


def test_evaluate_outputs(evaluated):
    names = {p.name for p in evaluated.iterdir()}
    for expect in ("cv_report.json", "metrics.csv", "validation_curves.csv",
                   "validation_curves.svg", "level_sweep.csv", "level_sweep.svg",
                   "channel_map.csv", "channel_map.svg", "kfold_accuracies.csv",
                   "kfold_summary.csv", "kfold_hist.svg"):
        assert expect in names
    assert not any(n.endswith(".part") for n in names)
    doc = json.loads((evaluated / "cv_report.json").read_text())
    assert doc["kfold"]["K"] == 5 and doc["kfold"]["repeats"] == 3
    assert "vote" in doc["metrics"]
    assert len(doc["folds"]) == 10


def test_every_output_has_header(evaluated):
    doc = json.loads((evaluated / "cv_report.json").read_text())
    h = doc["header"]["config_hash"]
    for p in evaluated.iterdir():
        text = p.read_text()
        if p.suffix == ".csv":
            assert f"# config_hash {h}" in text.split("\n", 5)[1]
        elif p.suffix == ".svg":
            assert f"config_hash {h}" in text[:1000]


def test_report_regenerates_figures(evaluated):
    names = ("metrics.csv", "kfold_summary.csv", "kfold_accuracies.csv", "validation_curves.csv",
             "channel_map.svg", "kfold_hist.svg")
    before = {n: (evaluated / n).read_bytes() for n in names}
    for n in names:
        (evaluated / n).unlink()
    assert main(["report", "-o", str(evaluated)]) == 0
    for n in names:
        assert (evaluated / n).read_bytes() == before[n], n


def test_evaluate_prints_metrics(dataset, evaluated, capsys):
    args = ["evaluate", "--manifest", str(dataset)] + FAST + ["-o", str(evaluated)]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "vote: accuracy" in out and "CPz: accuracy" in out


def test_feature_config_mismatch(dataset, evaluated, tmp_path):
    args = ["evaluate", "--manifest", str(dataset), "--m-grid", "10", "--level-step", "5",
            "--features", str(evaluated / "features.csv"), "-o", str(tmp_path)]
    assert main(args) == 2


# ------------------------------------------------------------- exit codes

def test_exit_codes(tmp_path, capsys):
    assert main(["features", "-o", str(tmp_path)]) == 2                      # no manifest
    assert main(["features", "--manifest", str(tmp_path / "none.json"), "-o", str(tmp_path)]) == 3
    assert main(["evaluate", "--cv", "bogus", "--features", "x", "-o", str(tmp_path)]) == 2
    assert main(["report", "-o", str(tmp_path / "empty")]) == 3
    err = capsys.readouterr().err
    assert "none.json" in err


def test_bad_manifest_names_file_and_line(tmp_path, capsys):
    p = tmp_path / "m.json"
    p.write_text('{\n "fs": 500,\n "subjects": [,]\n}')
    assert main(["features", "--manifest", str(p), "-o", str(tmp_path)]) == 3
    assert f"{p}:3" in capsys.readouterr().err


def test_unknown_channel_is_config_error(dataset, tmp_path, capsys):
    args = ["features", "--manifest", str(dataset), "--channels", "Oz"] + FAST + ["-o", str(tmp_path)]
    assert main(args) == 2
    assert "available" in capsys.readouterr().err


# ------------------------------------------------------------------ config

def test_config_file_merged_under_flags(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"w": 0.7, "m_grid": [20, 40], "seed": 5}))
    from sdfkit.cli import build_parser, config_from_args
    ns = build_parser().parse_args(["features", "--config", str(cfg_file), "--seed", "9"])
    cfg = config_from_args(ns)
    assert cfg.w == 0.7 and tuple(cfg.m_grid) == (20, 40) and cfg.seed == 9
    assert cfg.alpha_f == RunConfig().alpha_f


def test_config_defaults():
    cfg = RunConfig()
    assert (cfg.stimulus, tuple(cfg.channels), tuple(cfg.m_grid)) == ("target", ("CP1", "CPz", "CP2"), (40,))
    assert (tuple(cfg.band), cfg.w, cfg.alpha_f, cfg.level_step) == ((1.0, 30.0), 0.55, 8e-4, 2.0)
    assert tuple(cfg.i2) == (0.18, 0.5)


def test_config_hash_ignores_output_dir():
    a = merge(None, {"output_dir": "x"})
    b = merge(None, {"output_dir": "y"})
    c = merge(None, {"w": 0.5})
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert a.feature_hash() == merge(None, {"cv": "permtest:10"}).feature_hash()


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SDFKIT_OUTPUT_DIR", str(tmp_path / "envout"))
    assert RunConfig().out == tmp_path / "envout"
    assert merge(None, {"output_dir": "z"}).out.name == "z"


@pytest.mark.parametrize("bad", [{"w": "abc"}, {"seed": 1.5}, {"snap": "yes"},
                                 {"stimulus": 3}, {"m_grid": ["x"]}, {"bogus": 1}])
def test_config_file_type_errors(tmp_path, bad):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["features", "--config", str(p), "-o", str(tmp_path)]) == 2


def test_config_file_invalid_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{\n  \"w\": ,\n}")
    assert main(["features", "--config", str(p), "-o", str(tmp_path)]) == 2
    assert "bad.json:2" in capsys.readouterr().err
