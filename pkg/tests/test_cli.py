import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from rotmarg.cli import main, read_csv, verify_manifest
from rotmarg.sim import gen_design


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_result(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest_digest=")
    rows = list(csv.DictReader(lines[1:]))
    return lines[0].split("=", 1)[1], rows


def _synthetic(tmp_path, n=60, p=5, seed=0, name="data.csv"):
    rng = np.random.default_rng(seed)
    X = gen_design(n, p, 0.3, rng)
    beta = np.zeros(p)
    beta[: min(2, p)] = [1.5, -1.0][: min(2, p)]
    y = X @ beta + rng.normal(size=n)
    header = ["y"] + [f"x{k}" for k in range(p)]
    return _write(tmp_path / name, header, np.column_stack([y, X]).tolist())


@pytest.fixture
def toy(tmp_path):
    return _write(tmp_path / "toy.csv", ["y", "a", "b"], [[1.0, 0.5, 2.0], [2.5, 1.5, -1.0], [0.2, -0.3, 0.7]])


def test_toy_fit_is_byte_identical(toy, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["fit", str(toy), "--backend", "bcr", "--m", "2", "--K", "1", "--seed", "7", "--out-dir", str(out)])
        assert code == 0
        outs.append(out)
    for name in ("inclusion_probs.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert (outs[0] / "timing.json").exists()


def test_result_schema_and_manifest(tmp_path):
    data = _synthetic(tmp_path)
    out = tmp_path / "out"
    assert main(["fit", str(data), "--backend", "amp", "--out-dir", str(out)]) == 0
    digest, rows = _read_result(out / "inclusion_probs.csv")
    header = (out / "inclusion_probs.csv").read_text().splitlines()[1]
    assert header == "feature,lambda_j,m_j,psi_j,converged,backend"
    assert [r["feature"] for r in rows] == [f"x{k}" for k in range(5)]
    assert all(0 <= float(r["lambda_j"]) <= 1 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["digest"] == digest
    assert verify_manifest(out / "manifest.json")
    manifest["config"]["prior"]["lam"] = 0.2
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert not verify_manifest(out / "manifest.json")


def test_single_feature_matches_two_model_formula(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.normal(size=25)
    y = 0.5 * x + rng.normal(size=25)
    path = _write(tmp_path / "p1.csv", ["y", "x"], np.column_stack([y, x]).tolist())
    out = tmp_path / "out"
    assert main(["fit", str(path), "--backend", "bcr", "--lambda", "0.3", "--out-dir", str(out)]) == 0
    _, rows = _read_result(out / "inclusion_probs.csv")
    # defaults: sigma2 = 0.5, psi = 10 sigma2, on standardized columns
    xs = (x - x.mean()) / x.std(ddof=1)
    ys = (y - y.mean()) / y.std(ddof=1)
    l1 = stats.multivariate_normal.logpdf(ys, np.zeros(25), 5.0 * np.outer(xs, xs) + 0.5 * np.eye(25))
    l0 = stats.multivariate_normal.logpdf(ys, np.zeros(25), 0.5 * np.eye(25))
    expected = 0.3 / (0.3 + 0.7 * np.exp(l0 - l1))
    assert abs(float(rows[0]["lambda_j"]) - expected) < 1e-6


def test_oracle_agrees_with_full_dimension_bcr(tmp_path):
    data = _synthetic(tmp_path, n=40, p=4, seed=3)
    assert main(["oracle", str(data), "--lambda", "0.3", "--out-dir", str(tmp_path / "o")]) == 0
    assert main(["fit", str(data), "--backend", "bcr", "--m", "4", "--lambda", "0.3",
                 "--out-dir", str(tmp_path / "f")]) == 0
    _, exact = _read_result(tmp_path / "o" / "inclusion_probs.csv")
    _, approx = _read_result(tmp_path / "f" / "inclusion_probs.csv")
    assert [r["feature"] for r in exact] == [r["feature"] for r in approx]
    assert all(r["backend"] == "exact" for r in exact)
    e = np.array([float(r["lambda_j"]) for r in exact])
    a = np.array([float(r["lambda_j"]) for r in approx])
    assert np.mean((e - a) ** 2) <= 0.05


def test_oracle_p12_is_fast(tmp_path):
    data = _synthetic(tmp_path, n=100, p=12)
    t0 = time.perf_counter()
    assert main(["oracle", str(data), "--out-dir", str(tmp_path / "o")]) == 0
    assert time.perf_counter() - t0 < 5.0


def test_oracle_cap_is_usage_error(tmp_path, capsys):
    data = _synthetic(tmp_path, n=50, p=21)
    assert main(["oracle", str(data), "--out-dir", str(tmp_path / "o")]) == 1
    assert "rotmarg fit" in capsys.readouterr().err


def test_empty_feature_set(tmp_path):
    path = _write(tmp_path / "y.csv", ["y"], [[1.0], [2.0], [3.0]])
    assert main(["fit", str(path), "--out-dir", str(tmp_path / "o")]) == 1
    assert main(["oracle", str(path), "--out-dir", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize(
    "rows, fragment",
    [
        ([[1, 2], [2, "abc"], [3, 1]], "row 3, column 'x'"),
        ([[1, 2], [2, ""], [3, 1]], "row 3, column 'x'"),
        ([[1, 2], [2], [3, 1]], "row 3"),
        ([[1, 2], [2, "nan"], [3, 1]], "non-finite"),
    ],
)
def test_bad_csv_is_data_error(tmp_path, capsys, rows, fragment):
    path = _write(tmp_path / "bad.csv", ["y", "x"], rows)
    assert main(["fit", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert fragment in capsys.readouterr().err


def test_missing_response_and_file(tmp_path, toy):
    assert main(["fit", str(toy), "--response", "nope", "--out-dir", str(tmp_path)]) == 2
    assert main(["fit", str(tmp_path / "absent.csv"), "--out-dir", str(tmp_path)]) == 2


def test_constant_column_is_data_error(tmp_path):
    path = _write(tmp_path / "c.csv", ["y", "x", "z"], [[1, 1, 0], [2, 1, 1], [3, 1, 5]])
    assert main(["fit", str(path), "--out-dir", str(tmp_path / "o")]) == 2


def test_usage_errors(tmp_path, toy):
    assert main(["fit", str(toy), "--lambda", "1.5", "--out-dir", str(tmp_path)]) == 1
    assert main(["fit", str(toy), "--K", "0", "--backend", "bcr", "--out-dir", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["fit", str(toy), "--backend", "gibbs"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_response_by_name_and_index(tmp_path):
    path = _write(tmp_path / "r.csv", ["a", "target", "b"], [[1, 2, 3], [4, 5, 6.5]])
    y, X, names = read_csv(path, "target")
    np.testing.assert_array_equal(y, [2, 5])
    assert names == ["a", "b"]
    y2, _, _ = read_csv(path, "1")
    np.testing.assert_array_equal(y, y2)


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("backend", ["bcr", "amp"])
def test_fit_threads_do_not_change_bytes(tmp_path, seed, backend):
    data = _synthetic(tmp_path, n=50, p=8, seed=seed)
    outs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        assert main(["fit", str(data), "--backend", backend, "--tune", "--seed", str(seed),
                     "--threads", str(threads), "--out-dir", str(out)]) == 0
        outs.append(out)
    for name in ("inclusion_probs.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def _sim_config(tmp_path, **kw):
    cfg = {"study": "mse", "n": 40, "p": 5, "beta_true": [2, 1, 0, 0, 0], "rho_grid": [0.0, 0.5],
           "replicates": 2, "lambda0": 0.4, "bcr": {"m": 2, "K": 3}, "seed": 5}
    cfg.update(kw)
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_outputs(tmp_path, capsys):
    cfg = _sim_config(tmp_path)
    out = tmp_path / "s"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == 0
    table = capsys.readouterr().out
    assert "method=bcr" in table and "method=amp" in table
    manifest = json.loads((out / "manifest.json").read_text())
    result = json.loads((out / "result.json").read_text())
    assert result["manifest_digest"] == manifest["digest"]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == f"# manifest_digest={manifest['digest']}"
    assert len(summary) == 2 + 2 * 2
    assert verify_manifest(out / "manifest.json")


def test_simulate_threads_identical(tmp_path):
    cfg = _sim_config(tmp_path, study="boxplot", cells=[[0.0, 10.0], [0.5, 1.0]], rho_grid=[0.0])
    for threads in (1, 8):
        assert main(["simulate", "--config", str(cfg), "--threads", str(threads),
                     "--out-dir", str(tmp_path / f"t{threads}")]) == 0
    for name in ("result.json", "summary.csv", "boxes.csv", "manifest.json"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_simulate_config_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(_sim_config(tmp_path, replicates=0)), "--out-dir", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(_sim_config(tmp_path, colour="red", shape=1)),
                 "--out-dir", str(tmp_path)]) == 1
    assert "colour, shape" in capsys.readouterr().err
    assert main(["simulate", "--out-dir", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_fig1_preset_structure(tmp_path):
    out = tmp_path / "fig1"
    assert main(["simulate", "--preset", "fig1", "--replicates", "1", "--out-dir", str(out)]) == 0
    lines = (out / "summary.csv").read_text().splitlines()[1:]
    rows = list(csv.DictReader(lines))
    assert len(rows) == 20
    assert {r["method"] for r in rows} == {"bcr", "amp"}
    assert sorted({float(r["rho"]) for r in rows}) == [round(0.1 * i, 1) for i in range(10)]
    assert {"mean", "p20", "p80"} <= set(rows[0])


def test_module_entry_point(toy, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rotmarg", "fit", str(toy), "--out-dir", str(tmp_path / "m")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "inclusion_probs.csv").exists()
