import json
import time

import numpy as np
import pandas as pd
import pytest

from panelcast.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, ExperimentConfig, main


def run(args):
    return main([str(a) for a in args])


def test_fit_outputs_and_manifest(tmp_path):
    out = tmp_path / "fit"
    assert run(["fit", "--panel", "toy", "--out", out, "--seed", 7]) == EXIT_OK
    for name in ("factors.csv", "loadings.csv", "eigenvalues.csv", "dynamics.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["rank"] == 1 and manifest["transposed"] is False
    loadings = pd.read_csv(out / "loadings.csv")
    assert list(loadings["unit"]) == [f"u{k}" for k in range(1, 9)]
    assert set(loadings["loading_ok"]) <= {0, 1}

    replay = tmp_path / "replay"
    assert run(["fit", "--from-manifest", out / "manifest.json", "--out", replay]) == EXIT_OK
    a = pd.read_csv(out / "factors.csv")
    b = pd.read_csv(replay / "factors.csv")
    pd.testing.assert_frame_equal(a, b)


def test_fit_options_recorded(tmp_path):
    out = tmp_path / "fit"
    assert run(["fit", "--panel", "toy", "--out", out, "--transpose",
                "--rank", "explained_variance:0.5"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["transposed"] is True
    assert manifest["config"]["transpose"] is True
    assert manifest["config"]["rank"] == "explained_variance:0.5"


def test_forecast_rows(tmp_path):
    out = tmp_path / "fc"
    assert run(["forecast", "--panel", "toy", "--out", out, "--horizons", "1,2,3",
                "--variance-unit", 0]) == EXIT_OK
    table = pd.read_csv(out / "forecasts.csv", keep_default_na=False)
    assert len(table) == 3 * 8
    assert list(table.columns[:3]) == ["unit", "unit_label", "horizon"]
    pieces = pd.read_csv(out / "variance_pieces.csv")
    assert "omega1" in set(pieces["piece"])


def test_forecast_alpha_nesting(tmp_path):
    tables = {}
    for alpha in (0.05, 0.10):
        out = tmp_path / str(alpha)
        assert run(["forecast", "--panel", "toy", "--out", out, "--alpha", alpha]) == EXIT_OK
        tables[alpha] = pd.read_csv(out / "forecasts.csv")
    wide, narrow = tables[0.05], tables[0.10]
    ok = wide["ci_lower"].notna()
    assert (wide.loc[ok, "ci_lower"] <= narrow.loc[ok, "ci_lower"]).all()
    assert (wide.loc[ok, "ci_upper"] >= narrow.loc[ok, "ci_upper"]).all()


def test_degenerate_row_written_blank(tmp_path):
    y = np.outer(np.arange(1.0, 7.0), np.linspace(-1, 1, 12)) + 0.01 * np.arange(72).reshape(6, 12)
    frame = pd.DataFrame(y, index=[f"u{k}" for k in range(6)])
    frame.iloc[2] = np.nan
    path = tmp_path / "panel.csv"
    frame.to_csv(path)
    out = tmp_path / "fc"
    assert run(["forecast", "--panel", path, "--out", out]) == EXIT_OK
    table = pd.read_csv(out / "forecasts.csv", keep_default_na=False)
    row = table[table["unit_label"] == "u2"].iloc[0]
    assert row["flags"].startswith("DEGENERATE")
    assert row["point"] == "" and row["ci_lower"] == ""


def test_simulate_smoke(tmp_path):
    out = tmp_path / "sim"
    start = time.perf_counter()
    code = run(["simulate", "--t-values", "16,32", "--trials", 3, "--n-units", 16,
                "--eval-units", 8, "--out", out])
    assert code == EXIT_OK
    assert time.perf_counter() - start < 10
    results = pd.read_csv(out / "results.csv")
    assert len(results) == 2 * 3 * 3
    for name in ("summary.csv", "slopes.csv", "wilcoxon.csv", "manifest.json"):
        assert (out / name).exists()

    ev = tmp_path / "eval"
    assert run(["eval", "--table", out / "results.csv", "--out", ev]) == EXIT_OK
    pd.testing.assert_frame_equal(pd.read_csv(ev / "summary.csv"),
                                  pd.read_csv(out / "summary.csv"))


def test_eval_forecasts(tmp_path):
    fc = pd.DataFrame({"unit": [0, 1, 2], "horizon": 1, "point": [1.0, 2.0, np.nan],
                       "ci_lower": [0.0, 2.5, np.nan], "ci_upper": [2.0, 3.0, np.nan]})
    act = pd.DataFrame({"unit": [0, 1, 2], "horizon": 1, "actual": [1.5, 2.0, 1.0]})
    fc.to_csv(tmp_path / "f.csv", index=False)
    act.to_csv(tmp_path / "a.csv", index=False)
    out = tmp_path / "ev"
    assert run(["eval", "--forecasts", tmp_path / "f.csv", "--actuals", tmp_path / "a.csv",
                "--out", out]) == EXIT_OK
    scores = pd.read_csv(out / "scores.csv").iloc[0]
    assert scores["n"] == 2
    assert scores["msfe"] == pytest.approx(0.125)
    assert scores["coverage"] == pytest.approx(0.5)


def test_invalid_t_exit_code(tmp_path, capsys):
    code = run(["simulate", "--t-values", "2,32", "--out", tmp_path / "x"])
    assert code == EXIT_VALIDATION
    assert "invalid input" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert run(["fit", "--panel", tmp_path / "nope.csv", "--out", tmp_path / "x"]) == EXIT_IO


def test_eval_needs_inputs(tmp_path):
    assert run(["eval", "--out", tmp_path / "x"]) == EXIT_VALIDATION


def test_ini_config(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\nrank = 2\ndetrend = yes\n[forecast]\nhorizons = 1,4\n"
                   "[run]\nseed = 12\n")
    cfg = ExperimentConfig.from_ini(ini)
    assert cfg.rank == "2" and cfg.detrend is True
    assert cfg.horizons == (1, 4) and cfg.seed == 12
    out = tmp_path / "fc"
    code = run(["forecast", "--config", ini, "--panel", "toy", "--out", out])
    assert code == EXIT_VALIDATION  # T=16 is too short for block cross-validation
    ini.write_text("[model]\nrank = 2\n[forecast]\nhorizons = 1,4\n[run]\nseed = 12\n")
    assert run(["forecast", "--config", ini, "--panel", "toy", "--out", out,
                "--seed", 13]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 13 and manifest["rank"] == 2
    assert manifest["config"]["horizons"] == [1, 4]
    assert len(pd.read_csv(out / "forecasts.csv")) == 16
