import json

import pytest

from repulsion import cli
from repulsion.dynamics import NumericalError


def _run(tmp_path, *args):
    return cli.main(["run", *args, "--out", str(tmp_path)])


def test_kernel_run_writes_artifacts(tmp_path, capsys):
    assert _run(tmp_path, "kernel", "--d", "3") == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["C1"] == pytest.approx(0.126366, abs=1e-6)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_sha256"]) == 64
    assert "numpy" in manifest["versions"]
    assert (tmp_path / "data.csv").read_text().startswith("quantity,d,t,value\n")


def test_unstable_config_exits_2_without_output(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "convergence", "sim": {
        "d": 1, "N": 1, "dt": 0.1, "T": 1.0, "scheme": "smoothed",
        "penalty": {"eps1": 0.1, "eps2": 0.1, "delta": 0.01}}}))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("raw", [
    {"experiment": "kernel", "extra": 1},
    {"experiment": "kernel", "params": {"bogus": 1}},
    {"experiment": "variance", "sim": {"d": 3, "N": 2, "dt": 0.01, "T": 1, "colour": "red"}},
    {"experiment": "nope"},
    {"experiment": "kernel", "schema_version": 99},
])
def test_invalid_configs(tmp_path, raw):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(raw))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_experiment_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "growth"}))
    assert cli.main(["run", "--config", str(cfg), "--experiment", "kernel", "--out", str(tmp_path / "o")]) == 0


def test_reruns_are_byte_identical(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "coupling", "replicas": 5, "times": [0.5],
                               "params": {"checks": ["box", "aux", "law"], "law_replicas": 200}}))
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--seed", "12", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()


def test_failed_predicate_exits_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "kernel", "params": {"tolerance": -1.0}}))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert (tmp_path / "o" / "summary.json").exists()


def test_numerical_failure_exits_3_without_output(tmp_path, monkeypatch):
    def boom(cfg, workers):
        raise NumericalError("non-finite phi1", replica=0, site=(0,), step=3)

    monkeypatch.setitem(cli.RUNNERS, "kernel", boom)
    out = tmp_path / "o"
    assert cli.main(["run", "kernel", "--out", str(out)]) == 3
    assert not out.exists()
