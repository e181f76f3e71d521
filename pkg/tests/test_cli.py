from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from lpmallows.cli import SCHEMAS, demo_config_path, load_run_config, main
from lpmallows.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"
DEMO_DIR = demo_config_path().parent


def small_config(tmp_path, name="cfg.yaml", **overrides) -> Path:
    d = yaml.safe_load(demo_config_path().read_text())
    d.update(data=str(DEMO_DIR / "demo_panel.csv"), forecasts=str(DEMO_DIR / "demo_forecasts.csv"),
             outcomes=["gdp"], policies=["rr", "almp"], horizons=[1, 4], windows={"full": None})
    d.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(d))
    return path


def read(path) -> pd.DataFrame:
    return pd.read_csv(path)


def test_small_run_schemas_and_golden(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    for name, cols in SCHEMAS.items():
        if name != "fit.csv":
            assert list(read(out / name).columns) == cols
    irf = read(out / "irf.csv")
    assert set(irf["model"]) == {"average", "Baseline", "A", "B", "C", "D", "E"}
    assert set(irf["regime"]) == {"loosening", "tightening"}
    w = read(out / "weights.csv")
    np.testing.assert_allclose(w.groupby(["policy", "horizon"])["weight"].sum(), 1.0, atol=1e-12)
    tests = read(out / "tests.csv")
    assert tests["verdict"].isin(["different", "not different"]).all()
    run = json.loads((out / "run.json").read_text())
    assert run["schema_version"] == "1" and run["outputs"] == {"full": "."}
    assert run["samples"]["full"]["gdp/rr"]["1"]["rows"] > 0
    for name in ("irf.csv", "weights.csv", "tests.csv", "summary.csv"):
        got, want = read(out / name), read(GOLDEN / name)
        pd.testing.assert_frame_equal(got, want, check_exact=False, rtol=1e-9, atol=1e-12)


def test_reruns_and_threads_are_byte_identical(tmp_path):
    cfg = small_config(tmp_path, windows={"full": None, "pre": [None, "1998-Q4"], "post": ["1999-Q1", None]})
    outs = []
    for j, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"out{j}"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert Path("window=pre/irf.csv") in files and Path("summary.csv") in files
    for other in outs[1:]:
        assert sorted(p.relative_to(other) for p in other.rglob("*") if p.is_file()) == files
        for f in files:
            assert (outs[0] / f).read_bytes() == (other / f).read_bytes(), f


def test_window_audit(tmp_path):
    cfg = small_config(tmp_path, windows={"pre": [None, "1998-Q4"], "post": ["1999-Q1", None]})
    out = tmp_path / "out"
    assert main(["weights", "--config", str(cfg), "--out", str(out)]) == 0
    run = json.loads((out / "run.json").read_text())
    pre = run["samples"]["pre"]["gdp/rr"]
    post = run["samples"]["post"]["gdp/rr"]
    for k in ("1", "4"):
        assert pre[k]["last"] <= "1998-Q4" and post[k]["first"] >= "1999-Q1"
    # windows restrict the base period; leads may run past the window end
    assert pre["4"]["last"] == "1998-Q4"
    assert (out / "window=pre" / "weights.csv").exists()
    assert not (out / "window=pre" / "irf.csv").exists()


def test_fit_and_summary(tmp_path):
    cfg = small_config(tmp_path, policies=["rr"], horizons=[2])
    out = tmp_path / "out"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    fit = read(out / "fit.csv")
    assert list(fit.columns) == SCHEMAS["fit.csv"]
    assert set(fit["model"]) == {"Baseline", "A", "B", "C", "D", "E"}
    assert main(["summary", "--config", str(cfg), "--out", str(out)]) == 0
    s = read(out / "summary.csv")
    assert s.columns[0] == "country" and "gdp_mean" in s.columns and "rr_sd" in s.columns
    assert len(s) == 11


def test_hpfilter_linear_series(tmp_path):
    periods = pd.period_range("2000Q1", periods=30, freq="Q").strftime("%Y-Q%q")
    df = pd.DataFrame({"country": "AA", "period": periods, "z": 2.0 + 0.5 * np.arange(30)})
    src = tmp_path / "lin.csv"
    df.to_csv(src, index=False)
    out = tmp_path / "out"
    assert main(["hpfilter", "--input", str(src), "--column", "z", "--out", str(out)]) == 0
    hp = read(out / "hpfilter.csv")
    assert list(hp.columns) == ["country", "period", "value", "trend", "cycle"]
    assert np.abs(hp["cycle"]).max() <= 1e-8


def test_simulate(tmp_path):
    spec = {"dgp": {"true_form": "A", "T": 40}, "replications": 2, "options": {"horizons": [1]}, "seed": 3}
    cfg = tmp_path / "sim.yaml"
    cfg.write_text(yaml.safe_dump(spec))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "mc_report.json").read_text())
    assert rep["summary"]["replications"] == 2 and len(rep["seeds"]) == 2


def test_errors_write_error_json(tmp_path, capsys):
    cfg = small_config(tmp_path, data=str(tmp_path / "missing.csv"))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["status"] == "error"
    assert json.loads(capsys.readouterr().err)["code"] == err["code"]
    bad = small_config(tmp_path, "bad.yaml", colour="blue")
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 2
    assert "colour" in json.loads((out / "error.json").read_text())["message"]


def test_seed_required_for_random_components(tmp_path):
    cfg = small_config(tmp_path, seed=None, bootstrap=5)
    with pytest.raises(ConfigError):
        load_run_config(cfg)
    assert load_run_config(cfg, seed=4).seed == 4
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("kw", [{"horizons": [0]}, {"alpha": 1.5}, {"models": ["A"]}, {"criterion": "aic"},
                                {"bandwidth": -1}, {"factors": "many"}, {"windows": {"w": ["1999-Q1"]}}])
def test_config_validation(tmp_path, kw):
    with pytest.raises(ConfigError):
        load_run_config(small_config(tmp_path, **kw))


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "lpmallows", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
