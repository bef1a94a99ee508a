import csv
import json
import math

import numpy as np
import pytest

from koopman_kernel import cli
from koopman_kernel import collocation as co
from koopman_kernel import config as cf
from koopman_kernel import dynsys as ds
from koopman_kernel import kernel as kn

SMALL = {
    "name": "small",
    "system": {"builtin": "example1"},
    "domain": {"lower": [-1, -1], "upper": [1, 1]},
    "sampling": {"scheme": "grid", "shape": [12, 12]},
    "sigma": [2, 2],
    "eigenpair": {"lambda": -1.0},
    "eval_grid": {"shape": [15, 15]},
    "truth": "x1 - x2^2",
    "trajectory": {"starts": {"halton": 4, "lower": [-0.5, -0.5], "upper": [0.5, 0.5]},
                   "T": 0.5, "dt": 0.01},
    "convergence": {"shapes": [[5, 5], [8, 8]], "holdout": 50},
}


def write_config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_all_commands_and_determinism(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run("solve", "--config", cfg, "--out", out) == 0
        assert run("grid", "--config", cfg, "--out", out) == 0
        assert run("traj", "--config", cfg, "--out", out) == 0
        assert run("converge", "--config", cfg, "--out", out) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert set(outputs[0]) == {"model.json", "diagnostics.json", "phi.csv", "summary.json",
                               "property.json", "convergence.csv"}
    assert outputs[0] == outputs[1]

    rows = read_csv(tmp_path / "run0" / "phi.csv")
    assert rows[0] == ["x1", "x2", "phi_star", "phi_true", "abs_err", "rel_err", "excluded"]
    assert len(rows) == 1 + 15 * 15
    assert {r[-1] for r in rows[1:]} <= {"0", "1"}
    conv = read_csv(tmp_path / "run0" / "convergence.csv")
    assert conv[0] == ["N", "rho", "residual_rms", "rel_err_median", "status"]
    assert [r[0] for r in conv[1:]] == ["25", "64"]
    assert not list(tmp_path.glob("run0/.*.tmp"))


def test_grid_matches_in_memory_model(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    assert run("solve", "--config", cfg, "--out", out) == 0
    assert run("grid", "--config", cfg, "--out", out) == 0
    conf = cf.load(cfg)
    gs = co.build(conf.system, ds.linearize(conf.system), conf.pair_index,
                  co.sample(conf.domain, conf.scheme), conf.kernel)
    model = co.solve(gs)
    rows = read_csv(out / "phi.csv")[1:]
    X = np.array([[float(r[0]), float(r[1])] for r in rows])
    got = np.array([float(r[2]) for r in rows])
    np.testing.assert_allclose(got, model.batch_eval(X), rtol=0, atol=1e-15)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rel_err_median"] < 1e-2


def test_trivial_model_grid(tmp_path):
    conf = {
        "system": {"expressions": ["-x1", "3*x2"], "dimension": 2, "equilibrium": [0, 0]},
        "domain": {"lower": [-1, -1], "upper": [1, 1]},
        "sampling": {"scheme": "grid", "shape": [3, 3]},
        "sigma": [1, 1],
        "eigenpair": {"lambda": -1.0},
        "eval_grid": {"shape": [3, 3]},
    }
    cfg = write_config(tmp_path, conf)
    model = co.zero_model(-1.0, np.array([1.0, 0.0]), np.zeros(2), kn.GaussianKernel([1, 1]))
    mpath = tmp_path / "zero.json"
    mpath.write_text(co.dumps_model(model))
    assert run("grid", "--config", cfg, "--model", mpath, "--out", tmp_path / "g") == 0
    rows = read_csv(tmp_path / "g" / "phi.csv")
    assert rows[0] == ["x1", "x2", "phi_star"]
    for r in rows[1:]:
        assert float(r[2]) == float(r[0])


def test_solve_records_sigma_and_lambda(tmp_path):
    obj = dict(SMALL, sigma=[2, 3], eigenpair={"lambda": 3.0}, truth=None)
    cfg = write_config(tmp_path, obj)
    assert run("solve", "--config", cfg, "--out", tmp_path / "o", "--eta", "1e-9") == 0
    model = json.loads((tmp_path / "o" / "model.json").read_text())
    assert model["sigma"] == ["2", "3"]
    assert float(model["lambda"]) == pytest.approx(3.0, abs=1e-12)
    assert float(model["eta"]) == 1e-9
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert diag["fill_distance"] > 0 and diag["path"]


def test_duffing_preset_lambda(tmp_path):
    obj, _ = cf.read_raw("duffing-l1")
    obj["sampling"]["shape"] = [10, 10]
    cfg = write_config(tmp_path, obj)
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 0
    model = json.loads((tmp_path / "o" / "model.json").read_text())
    assert float(model["lambda"]) == pytest.approx((-1 + math.sqrt(17)) / 4, abs=1e-9)


def test_config_errors(tmp_path, capsys):
    cfg = write_config(tmp_path, dict(SMALL, system={"builtin": "nope"}))
    assert run("solve", "--config", cfg, "--out", tmp_path) == 2
    assert "UnknownSystem" in capsys.readouterr().err
    assert run("solve", "--config", tmp_path / "missing.json") == 2
    assert run("solve", "--config", write_config(tmp_path, dict(SMALL, sigma=[1, 2, 3]))) == 2
    assert run("solve", "--config", write_config(tmp_path, dict(SMALL, eigenpair={"lambda": 2}))) == 2
    assert run("solve", "--config", write_config(tmp_path, dict(SMALL, colour="red"))) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert run("solve", "--config", tmp_path / "broken.json") == 2
    assert run("bogus") == 2


def test_solver_failure_exit_code(tmp_path):
    obj = dict(SMALL, system={"expressions": ["-x1 + 0*sqrt(x1 + 0.5)", "-2*x2"],
                              "dimension": 2})
    assert run("solve", "--config", write_config(tmp_path, obj), "--out", tmp_path / "o") == 3


def test_model_mismatch_exit_code(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    assert run("solve", "--config", cfg, "--out", out) == 0
    other = write_config(tmp_path, dict(SMALL, eigenpair={"lambda": 3.0}), "other.json")
    assert run("grid", "--config", other, "--model", out / "model.json", "--out", out) == 4
    assert run("traj", "--config", other, "--model", out / "model.json", "--out", out) == 4
    assert run("grid", "--config", cfg, "--model", tmp_path / "nothing.json") == 4


def test_converge_needs_two_rows(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    assert run("converge", "--config", cfg, "--shapes", "6x6", "--out", tmp_path / "o") == 3
    assert run("converge", "--config", cfg, "--shapes", "4,6", "--out", tmp_path / "p") == 0


def test_list_is_stable(capsys):
    assert run("list") == 0
    first = capsys.readouterr().out
    assert run("list") == 0
    assert capsys.readouterr().out == first
    duff = next(l for l in first.splitlines() if l.startswith("duffing"))
    assert "0.780776, -1.280776" in duff
    grad = next(l for l in first.splitlines() if l.startswith("gradient3d"))
    assert "(3.70," in grad


def test_presets_parse():
    names = cf.preset_names()
    for required in ("example1-l1", "example1-l2", "example2-l1", "example2-l2",
                     "duffing-l1", "gradient3d-l1"):
        assert required in names
    for name in names:
        c = cf.load(name)
        assert c.sigma.size == c.dimension
    g = cf.load("gradient3d-l1")
    X = g.eval_grid.points(g.domain)
    assert np.all(X[:, 2] == 0.57) and len(X) == 100 * 100
    assert isinstance(g.scheme, co.Halton) and g.scheme.count == 3379
