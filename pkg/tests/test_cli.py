import csv
import json
from importlib import resources

import numpy as np
import pytest

from robustlc.cli import main

DATA = str(resources.files("robustlc").joinpath("data/synthetic_panel.csv"))
SMALL = ["--input", DATA, "--ages", "40:70", "--years", "1990:2019"]


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fit_tppca(tmp_path):
    assert main(["fit", "--method", "tppca", "--input", DATA, "--out", str(tmp_path)]) == 0
    assert _rows(tmp_path / "a.csv")[0] == ["age", "a"]
    assert _rows(tmp_path / "b.csv")[0] == ["age", "b"]
    assert _rows(tmp_path / "k.csv")[0] == ["year", "k"]
    assert len(_rows(tmp_path / "k.csv")) == 51
    man = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("method", "iterations", "loglik", "nu", "seed", "config_hash", "cross_check"):
        assert key in man
    assert man["method"] == "tppca" and man["nu"] > 0
    b = np.array([float(r[1]) for r in _rows(tmp_path / "b.csv")[1:]])
    assert b.sum() == pytest.approx(1.0)


def test_seventeen_digit_round_trip(tmp_path):
    from robustlc.data import load_dataset
    from robustlc.estimators import estimate
    main(["fit", "--method", "svd", *SMALL, "--out", str(tmp_path)])
    ds = load_dataset(DATA).subset(ages=(40, 70), years=(1990, 2019))
    fit = estimate(ds, "svd")
    k = np.array([float(r[1]) for r in _rows(tmp_path / "k.csv")[1:]])
    assert np.array_equal(k, fit.k)


def test_fit_svd_ppca_cross_check(tmp_path):
    main(["fit", "--method", "svd", *SMALL, "--out", str(tmp_path / "s")])
    main(["fit", "--method", "ppca", *SMALL, "--out", str(tmp_path / "p")])
    bs = np.array([float(r[1]) for r in _rows(tmp_path / "s" / "b.csv")[1:]])
    bp = np.array([float(r[1]) for r in _rows(tmp_path / "p" / "b.csv")[1:]])
    assert np.abs(bs - bp).max() <= 1e-8
    man = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert man["cross_check"]["svd_vs_ppca_b_max_abs_diff"] <= 1e-8


def test_fit_glm(tmp_path):
    assert main(["fit", "--method", "poisson_glm", *SMALL, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["iterations"] >= 1 and man["nu"] is None


def test_invalid_nu_init(tmp_path, capsys):
    assert main(["fit", "--method", "tppca", "--input", DATA, "--nu-init", "-1",
                 "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "invalid nu_init" in err and err.count("\n") == 1


def test_detect_alpha_validation(capsys):
    assert main(["detect", "--input", DATA, "--alpha", "1.5"]) == 2
    assert "alpha must be in (0,1)" in capsys.readouterr().err


def test_detect(tmp_path):
    assert main(["detect", *SMALL, "--alpha", "0.95", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "outliers.csv")
    assert rows[0] == ["year", "score", "threshold", "flagged"]
    assert len(rows) == 31
    assert {r[3] for r in rows[1:]} <= {"0", "1"}


def test_bootstrap_is_reproducible(tmp_path):
    for d in ("r1", "r2"):
        assert main(["bootstrap", "--method", "svd", *SMALL, "--B", "10", "--seed", "1",
                     "--threads", "1", "--out", str(tmp_path / d)]) == 0
    one = (tmp_path / "r1" / "bootstrap.csv").read_bytes()
    assert one == (tmp_path / "r2" / "bootstrap.csv").read_bytes()
    assert _rows(tmp_path / "r1" / "bootstrap.csv")[0] == ["parameter", "index", "point", "se",
                                                            "ci_lo", "ci_hi"]
    m1 = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "r2" / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"] and m1["B_effective"] == 10


def test_simulate_counts(tmp_path):
    assert main(["simulate", "--input", DATA, "--duration", "3", "--estimators", "svd",
                 "--threads", "1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "results.csv")
    assert rows[0][:3] == ["window_start", "window_end", "estimator"]
    assert sum(r[2] == "svd" for r in rows[1:]) == 48
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["n_windows"] == 48 and man["pandemic_total"] == 385430


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nmethod = svd\nages = 40:70\nyears = 1990:2019\n")
    main(["fit", "--input", DATA, "--config", str(cfg), "--out", str(tmp_path / "a")])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["method"] == "svd"
    main(["fit", "--input", DATA, "--config", str(cfg), "--method", "ppca",
          "--out", str(tmp_path / "b")])
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["method"] == "ppca"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["fit", "--input", DATA, "--config", str(cfg)]) == 2


def test_missing_input_and_usage_errors(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--ages", "10-20"])
    assert exc.value.code == 2


def test_runtime_failure_exit_code(tmp_path):
    f = tmp_path / "d.csv"
    lines = ["year,age,deaths,exposure"]
    for year in (2000, 2001, 2002):
        for age in (0, 1, 2):
            d = 0 if year == 2001 else 10 + age
            lines.append(f"{year},{age},{d},1000")
    f.write_text("\n".join(lines) + "\n")
    assert main(["fit", "--method", "poisson_glm", "--input", str(f),
                 "--out", str(tmp_path)]) == 1


def test_synthesize(tmp_path):
    assert main(["synthesize", "--years", "2000:2009", "--ages", "0:20",
                 "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "synthetic.csv")) == 1 + 10 * 21
