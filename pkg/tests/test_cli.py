import json

import pytest

from klab.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, EXPERIMENTS, main, run_experiment


def _run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def test_experiment_list(capsys):
    # [TRIVIAL] registry
    assert main(["experiment", "list"]) == EXIT_OK
    assert capsys.readouterr().out.split() == sorted(EXPERIMENTS)


@pytest.mark.parametrize("name", ["surgery-bookkeeping", "scaling", "torus-covering"])
def test_experiments_pass(tmp_path, name):
    # [TRIVIAL] end to end
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": name, "seed": 1}))
    assert _run(tmp_path, "experiment", "run", str(spec)) == EXIT_OK
    rep = json.loads((tmp_path / f"{name}.report.json").read_text())
    assert rep["pass"] and rep["experiment"] == name


def test_threshold_experiment():
    # [PAPER] threshold is positive
    rep = run_experiment({"name": "trivialize-threshold", "inputs": {"mesh": {"generator": "sphere", "n": 4}}})
    assert rep["pass"] and rep["report"]["delta_star"] > 0


def test_reports_are_byte_identical(tmp_path):
    # [TRIVIAL] determinism
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "surgery-bookkeeping", "seed": 3, "output": "a.json"}))
    _run(tmp_path, "experiment", "run", str(spec))
    first = (tmp_path / "a.json").read_bytes()
    _run(tmp_path, "experiment", "run", str(spec))
    assert (tmp_path / "a.json").read_bytes() == first


@pytest.mark.parametrize("spec", [{"params": {}}, {"name": "nope"}, {"name": "scaling", "colour": 1}])
def test_malformed_spec(tmp_path, spec):
    # [TRIVIAL] exit code 2
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    assert _run(tmp_path, "experiment", "run", str(path)) == EXIT_INPUT


def test_missing_files(tmp_path):
    # [TRIVIAL] exit code 2
    assert _run(tmp_path, "experiment", "run", str(tmp_path / "none.json")) == EXIT_INPUT
    assert _run(tmp_path, "mesh", "info", "--mesh", str(tmp_path / "none.json")) == EXIT_INPUT


def test_mesh_bundle_chern_pipeline(tmp_path, capsys):
    # [DERIVED] flux 2 monopole has c1 = 2
    assert _run(tmp_path, "mesh", "gen", "--spec", '{"generator": "sphere", "n": 8}', "--name", "s.json") == EXIT_OK
    mesh = str(tmp_path / "s.json")
    assert _run(tmp_path, "bundle", "monopole", "--mesh", mesh, "--flux", "2", "--name", "b.json") == EXIT_OK
    capsys.readouterr()
    assert _run(tmp_path, "chern", "eval", "--mesh", mesh, "--bundle", str(tmp_path / "b.json"), "--poly", "c1") == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["value"] == pytest.approx(2.0, abs=1e-9)
    # a monopole cannot be trivialized
    assert _run(tmp_path, "trivialize", "--mesh", mesh, "--bundle", str(tmp_path / "b.json"), "--eps", "0.1") == EXIT_FAIL
    assert _run(tmp_path, "chern", "eval", "--mesh", mesh, "--bundle", str(tmp_path / "b.json"),
                "--poly", "c2") == EXIT_INPUT


def test_surgery_transplant_cli(tmp_path):
    # [TRIVIAL] end to end
    assert _run(tmp_path, "mesh", "gen", "--spec", '{"generator": "torus", "n": 8}', "--name", "t.json") == EXIT_OK
    assert _run(tmp_path, "surgery", "apply", "--mesh", str(tmp_path / "t.json"), "--name", "m.json") == EXIT_OK
    mesh = str(tmp_path / "m.json")
    assert _run(tmp_path, "bundle", "flat", "--mesh", mesh, "--delta", "0.01", "--name", "b.json") == EXIT_OK
    assert _run(tmp_path, "surgery", "transplant", "--mesh", mesh, "--bundle", str(tmp_path / "b.json")) == EXIT_OK
    rep = json.loads((tmp_path / "transplant.json").read_text())
    assert rep["identity_residual"] <= 1e-6


def test_karea_optimize_csv(tmp_path):
    # [TRIVIAL] trace export
    assert _run(tmp_path, "karea", "optimize", "--mesh", '{"generator": "torus", "n": 8}',
                "--sector", "1:1", "--perturbation", "0.05", "--csv", "trace.csv") == EXIT_OK
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective" and len(lines) > 2
