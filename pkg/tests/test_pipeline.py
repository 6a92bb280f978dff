import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stcp.kron_linalg import InvalidInput
from stcp.mcmc import SCALAR_COLUMNS, ChainTrace
from stcp.model import SpaceTimeGrid
from stcp.pipeline import (
    IngestionError,
    calendar_label,
    deseasonalize_monthly,
    detrend_significant,
    load_config,
    load_grid_csv,
    normalize_series,
    parse_support,
    preprocess_field,
    read_trace,
    summarize_posterior,
    write_grid_csv,
    write_trace_csv,
    zonal_mean,
)
from stcp.pipeline.cli import main
from stcp.pipeline.io import write_trace_meta


def _write(path, rows):
    path.write_text("lon,lat,time,value\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


# ingestion ---------------------------------------------------------------------------

def test_load_small_grid(tmp_path):
    rows = [(0, 0, t, 10 * t) for t in (1, 2, 3)] + [(1, 0, t, 10 * t + 1) for t in (1, 2, 3)]
    grid, y = load_grid_csv(_write(tmp_path / "a.csv", rows))
    assert (grid.n, grid.m) == (2, 3)
    assert np.array_equal(y, [[10, 11], [20, 21], [30, 31]])


def test_row_order_does_not_matter(tmp_path):
    rows = [(lon, lat, t, lon + 2 * lat + 0.1 * t) for lon in (0, 1) for lat in (5, 6) for t in (1, 2, 3)]
    _, a = load_grid_csv(_write(tmp_path / "a.csv", rows))
    perm = np.random.default_rng(0).permutation(len(rows))
    _, b = load_grid_csv(_write(tmp_path / "b.csv", [rows[i] for i in perm]))
    assert np.array_equal(a, b)


def test_time_relabelled_from_one(tmp_path):
    rows = [(lon, 0, t, t) for lon in (0, 1) for t in (1985, 1986, 1987)]
    grid, y = load_grid_csv(_write(tmp_path / "a.csv", rows))
    assert grid.m == 3 and np.array_equal(y[:, 0], [1985, 1986, 1987])


def test_missing_cell_is_named(tmp_path):
    rows = [(0, 0, 1, 0.0), (0, 0, 2, 0.0), (1, 0, 1, 0.0)]
    with pytest.raises(IngestionError, match=r"\(1,0,2\)"):
        load_grid_csv(_write(tmp_path / "a.csv", rows))


def test_missing_cells_listing_is_capped(tmp_path):
    rows = [(0, 0, t, 0.0) for t in range(1, 21)] + [(1, 0, 1, 0.0), (1, 0, 20, 0.0)]
    with pytest.raises(IngestionError) as err:
        load_grid_csv(_write(tmp_path / "a.csv", rows))
    assert "18 missing" in str(err.value) and str(err.value).count("(1,0,") == 10


def test_duplicate_cell(tmp_path):
    rows = [(0, 0, 1, 0.0), (0, 0, 1, 1.0), (0, 0, 2, 0.0)]
    with pytest.raises(IngestionError, match="duplicate"):
        load_grid_csv(_write(tmp_path / "a.csv", rows))


@pytest.mark.parametrize("text", ["x,y,time,value\n0,0,1,1\n", "lon,lat,time,value\n0,0,1,abc\n",
                                  "lon,lat,time,value\n0,0,1.5,1\n",
                                  "lon,lat,time,value\n0,0,1,1\n0,0,3,1\n"])
def test_malformed_files(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(IngestionError):
        load_grid_csv(p)


def test_write_load_round_trip(tmp_path, rng):
    grid = SpaceTimeGrid.lattice(3, 7, origin_index=0)
    y = rng.standard_normal((7, 9))
    write_grid_csv(tmp_path / "g.csv", grid, y)
    g2, y2 = load_grid_csv(tmp_path / "g.csv", metric=grid.metric)
    order = np.lexsort((grid.locations[:, 1], grid.locations[:, 0]))
    assert np.array_equal(g2.locations, grid.locations[order])
    assert np.array_equal(y2, y[:, order])


# preprocessing -----------------------------------------------------------------------

def test_deseasonalize_periodic_signal():
    t = np.arange(60)
    x = np.sin(2 * np.pi * t / 12) + 0.3 * np.cos(4 * np.pi * t / 12)
    assert np.allclose(deseasonalize_monthly(x, 12, pre_event_end=36), 0, atol=1e-12)


def test_deseasonalize_constant():
    out = deseasonalize_monthly(np.full(30, 4.0), 12)
    assert np.allclose(out, 0)


def test_deseasonalize_trend_residual_uncorrelated():
    t = np.arange(240)
    s = np.sin(2 * np.pi * t / 12)
    rng = np.random.default_rng(0)
    x = 2 * s + 0.002 * t + 0.2 * rng.standard_normal(240)
    r = deseasonalize_monthly(x, 12)
    assert abs(np.corrcoef(r, s)[0, 1]) < 0.05


def test_deseasonalize_errors():
    with pytest.raises(InvalidInput):
        deseasonalize_monthly(np.zeros(20), 12)
    with pytest.raises(InvalidInput):
        deseasonalize_monthly(np.zeros(30), 12, pre_event_end=6)


def test_detrend_exact_line():
    t = np.arange(1, 41, dtype=float)
    y = 0.1 * t + 1e-9 * np.sin(t)
    out, slope, sig = detrend_significant(y, pre_event_end=30)
    assert sig and slope == pytest.approx(0.1, abs=1e-8)
    assert abs(out[:30].mean()) < 1e-9
    assert np.allclose(out, 0, atol=1e-7)  # the line is removed from the whole series


def test_detrend_white_noise_rate():
    rng = np.random.default_rng(11)
    sig = np.array([detrend_significant(rng.standard_normal(200), 150)[2] for _ in range(1000)])
    assert abs((1 - sig.mean()) - 0.95) <= 0.02


def test_detrend_constant_and_field():
    out, slope, sig = detrend_significant(np.full(10, 3.0), 5)
    assert np.allclose(out, 0) and slope == 0 and not sig
    field = np.column_stack([np.arange(20.0), np.ones(20)])
    out, slopes, sigs = detrend_significant(field, 10)
    assert out.shape == (20, 2) and sigs.tolist() == [True, False]
    with pytest.raises(InvalidInput):
        detrend_significant(np.zeros(10), 2)


def test_normalize():
    rng = np.random.default_rng(2)
    x = 2 * rng.standard_normal(50)
    x[:30] = (x[:30] - x[:30].mean()) / x[:30].std(ddof=1) * 2
    z, scale = normalize_series(x, 30)
    assert scale == pytest.approx(2.0)
    assert z[:30].std(ddof=1) == pytest.approx(1.0)
    assert np.allclose(z * scale, x)
    with pytest.raises(InvalidInput):
        normalize_series(np.ones(10), 5)


def test_back_transform_of_gamma0_is_linear(rng):
    field = rng.standard_normal((20, 3)) * [1.0, 2.0, 5.0]
    _, scales = preprocess_field(field, 10, detrend=False)
    tr = _trace(np.full((5, 3), 20.0), m=20)
    tr.gamma0[:] = [1.0, 2.0, 3.0]
    rows = summarize_posterior(tr, _grid(3, 20), scales).per_location
    assert np.allclose([r["gamma0_mean"] for r in rows], np.array([1, 2, 3]) * scales)


def test_preprocessing_is_per_location(rng):
    field = rng.standard_normal((40, 4)) + np.arange(40)[:, None] * [0.0, 0.1, 0.0, 0.3]
    full, sc = preprocess_field(field, 25, deseasonalize=False)
    perm = [2, 0, 3, 1]
    part, sc2 = preprocess_field(field[:, perm], 25, deseasonalize=False)
    assert np.allclose(full[:, perm], part) and np.allclose(sc[perm], sc2)


def test_zonal_mean():
    locs = np.array([[0, 10], [90, 10], [0, 20], [90, 20]], float)
    grid = SpaceTimeGrid(locs, 3, 2, "great-circle")
    f = np.array([[1.0, 3.0, 5.0, 5.0], [0.0, 2.0, -1.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    bg, out = zonal_mean(f, grid)
    assert np.array_equal(out, [[2.0, 5.0], [1.0, 0.0], [1.0, 1.0]])
    assert np.array_equal(bg.locations, [[0, 10], [0, 20]]) and bg.origin_index == 1


def test_zonal_single_longitude_is_identity():
    locs = np.array([[5, -10], [5, 0], [5, 10]], float)
    f = np.arange(12.0).reshape(4, 3)
    _, out = zonal_mean(f, SpaceTimeGrid(locs, 4, 0, "great-circle"))
    assert np.array_equal(out, f)


def test_zonal_variance_reduction():
    lons = np.arange(48) * 7.5
    locs = np.array([[lo, la] for la in (-5.0, 5.0) for lo in lons])
    rng = np.random.default_rng(4)
    f = rng.standard_normal((2000, locs.shape[0]))
    _, out = zonal_mean(f, SpaceTimeGrid(locs, 2000, 0, "great-circle"))
    assert out.var(axis=0).mean() == pytest.approx(1 / 48, rel=0.05)


# summaries ---------------------------------------------------------------------------

def _trace(tau, m=61):
    tau = np.asarray(tau, float)
    if tau.shape[1] == 1:
        tau = np.hstack([tau, np.full_like(tau, m)])
    k, n = tau.shape
    return ChainTrace(m, "equal", np.arange(1, k + 1), np.zeros(k, int),
                      np.ones((k, len(SCALAR_COLUMNS))), tau, np.zeros((k, n)), {})


def _grid(n, m=61):
    n = max(n, 2)  # grids need two locations; single-location tests pad a column
    return SpaceTimeGrid(np.c_[np.arange(float(n)), np.zeros(n)], m, 0, "euclidean")


def test_summary_no_change():
    rows = summarize_posterior(_trace(np.full((10, 1), 61.0)), _grid(1)).per_location
    assert rows[0]["p_no_cp"] == 1 and rows[0]["cp_mode"] is None and rows[0]["cp_label"] == "none"


def test_summary_floored_mode():
    r = summarize_posterior(_trace([[18.2], [18.9], [19.5]]), _grid(1)).per_location[0]
    assert r["cp_mode"] == 18 and r["p_no_cp"] == 0


def test_summary_tie_goes_to_smaller():
    r = summarize_posterior(_trace([[20.5], [19.1], [20.2], [19.9]]), _grid(1)).per_location[0]
    assert r["cp_mode"] == 19


def test_summary_fields_and_calendar():
    tr = _trace([[9.0, 61.0], [9.5, 40.0], [10.2, 61.0], [9.7, 61.0]])
    s = summarize_posterior(tr, _grid(2), calendar_start="1991-01")
    a, b = s.per_location
    assert a["cp_label"] == "Sep 1991" and b["cp_label"] == "none"
    assert b["p_no_cp"] == 0.75 and a["p_no_cp"] + (1 - a["p_no_cp"]) == 1
    for r in s.per_location:
        assert r["ci_low"] <= r["ci_high"] and r["gamma0_low"] <= r["gamma0_high"]
    assert "deviance" not in s.global_params and set(s.global_params) == set(SCALAR_COLUMNS) - {"deviance"}
    assert s.dic is None
    d = s.to_dict()
    assert set(d) >= {"per_location", "global", "dic"}


def test_summary_empty_trace():
    with pytest.raises(InvalidInput):
        summarize_posterior(_trace(np.zeros((0, 1))), _grid(1))


def test_calendar_label():
    assert calendar_label(1, "1985-01") == "Jan 1985"
    assert calendar_label(81, "1985-01") == "Sep 1991"
    assert calendar_label(7) == "7"
    with pytest.raises(InvalidInput):
        calendar_label(3, "March")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1, 80), min_size=1, max_size=30))
def test_summary_probabilities_sum_to_one(draws):
    r = summarize_posterior(_trace(np.array(draws)[:, None]), _grid(1)).per_location[0]
    p_cp = np.mean(np.minimum(61, draws) < 61)
    assert r["p_no_cp"] + p_cp == pytest.approx(1.0)
    assert 0 <= r["p_no_cp"] <= 1 and r["ci_low"] <= r["ci_high"]


def test_trace_round_trip(tmp_path):
    tr = _trace([[3.5, 61.0], [4.25, 60.0]])
    tr.deviance_at_mean = 12.5
    tr.acceptance = {"delta": np.array([0.4, 0.5])}
    write_trace_csv(tmp_path / "t.csv", tr)
    write_trace_meta(tmp_path / "t.json", tr)
    back = read_trace(tmp_path / "t.csv", tmp_path / "t.json")
    assert np.array_equal(back.tau, tr.tau) and np.array_equal(back.scalars, tr.scalars)
    assert back.deviance_at_mean == 12.5
    head = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert head[:3] == ["iteration", "chain", "tau0"] and "tau_0" in head and "tau_1" in head


# configuration -----------------------------------------------------------------------

def test_config_defaults():
    rc = load_config(None)
    assert (rc.a, rc.b, rc.s_a_sq, rc.s_b_sq) == (2.0, 1.0, 100.0, 100.0)
    assert (rc.decay_lower, rc.decay_upper, rc.batch_size) == (0.01, 10.0, 50)
    h = rc.hyperparams(61)
    assert h.a1 == 2.0 and h.b5 == 1.0 and h.decay_bounds["phi_U"] == (0.01, 10.0)


def test_config_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[data]\npath = d.csv\n[model]\nvariance_mode = increase\ntau0_support = 5-9\n"
                 "pin_beta = yes\n[mcmc]\niterations = 50\n")
    rc = load_config(p)
    assert rc.data_path == str(tmp_path / "d.csv")
    assert rc.variance_mode == "increase" and rc.pin_beta and rc.iterations == 50
    assert rc.hyperparams(20).support(20)[0].tolist() == [5, 6, 7, 8, 9, 20]


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[mcmc]\nspeed = 3\n", "[mcmc]\niterations = many\n",
                                  "[model]\nvariance_mode = wild\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(InvalidInput):
        load_config(p)


def test_config_missing_file(tmp_path):
    with pytest.raises(InvalidInput):
        load_config(tmp_path / "none.ini")


def test_parse_support():
    assert parse_support("all", 5).tolist() == [1, 2, 3, 4, 5]
    assert parse_support("2-3", 10).tolist() == [2, 3, 10]
    assert parse_support("4,M", 8).tolist() == [4, 8]
    with pytest.raises(InvalidInput):
        parse_support("0-3", 8)


# command line ------------------------------------------------------------------------

def _ini(tmp_path, body):
    p = tmp_path / "run.ini"
    p.write_text(body)
    return str(p)


def test_cli_generate_then_fit(tmp_path):
    gen, fit = tmp_path / "gen", tmp_path / "fit"
    body = "[simulate]\nside = 4\nm = 40\ngamma0 = 4\n[mcmc]\niterations = 400\nburn_in = 150\n"
    assert main(["generate", "--config", _ini(tmp_path, body), "--seed", "3", "--out", str(gen)]) == 0
    truth = json.loads((gen / "truth.json").read_text())
    lon, lat = truth["origin"]
    cfg = _ini(tmp_path, body + f"[data]\npath = {gen / 'data.csv'}\nmetric = euclidean\n"
                         f"origin = {lon},{lat}\n")
    assert main(["fit", "--config", cfg, "--seed", "5", "--out", str(fit)]) == 0
    summary = json.loads((fit / "summary.json").read_text())
    assert summary["dic"] is not None and summary["variance_mode"] == "equal"
    # match locations by coordinates; the loader sorts them by (lon, lat)
    has = {tuple(loc): cp for loc, cp in zip(truth["locations"], truth["has_cp"])}
    agree = [(r["cp_mode"] is not None) == has[(r["lon"], r["lat"])] for r in summary["per_location"]]
    assert len(agree) == 16 and np.mean(agree) >= 0.8
    assert len(read_trace(fit / "trace.csv", fit / "trace.json")) == 250


def test_cli_fit_is_byte_reproducible(tmp_path):
    grid = SpaceTimeGrid.lattice(2, 10, origin_index=0)
    y = np.random.default_rng(0).standard_normal((10, 4))
    write_grid_csv(tmp_path / "d.csv", grid, y)
    cfg = _ini(tmp_path, f"[data]\npath = {tmp_path / 'd.csv'}\n[mcmc]\niterations = 40\nburn_in = 10\n")
    for name in ("a", "b"):
        assert main(["fit", "--config", cfg, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a/trace.csv").read_bytes() == (tmp_path / "b/trace.csv").read_bytes()


def test_cli_fit_all_modes_and_summarize(tmp_path):
    grid = SpaceTimeGrid.lattice(2, 10, origin_index=0)
    y = np.random.default_rng(1).standard_normal((10, 4))
    write_grid_csv(tmp_path / "d.csv", grid, y)
    cfg = _ini(tmp_path, f"[data]\npath = {tmp_path / 'd.csv'}\ncalendar_start = 2000-01\n"
                         "[mcmc]\niterations = 30\nburn_in = 10\n")
    out = tmp_path / "all"
    assert main(["fit", "--config", cfg, "--variance-mode", "all", "--out", str(out)]) == 0
    dic = json.loads((out / "dic.json").read_text())
    assert set(dic["dic"]) == {"equal", "increase", "decrease"}
    assert dic["selected"] == min(dic["dic"], key=dic["dic"].get)
    for mode in ("equal", "increase", "decrease"):
        assert (out / f"trace_{mode}.csv").is_file()
    (out / "trace.csv").write_bytes((out / "trace_equal.csv").read_bytes())
    (out / "trace.json").write_bytes((out / "trace_equal.json").read_bytes())
    s_out = tmp_path / "s"
    assert main(["summarize", "--config", cfg, "--trace-dir", str(out), "--out", str(s_out)]) == 0
    assert len(json.loads((s_out / "summary.json").read_text())["per_location"]) == 4


def test_cli_compare_rows(tmp_path):
    cfg = _ini(tmp_path, "[simulate]\nside = 3\nm = 12\ngamma0 = 3\nreplications = 2\n"
                         "[mcmc]\niterations = 60\nburn_in = 10\n")
    assert main(["compare", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c/metrics.csv").read_text().splitlines()
    assert lines[0] == "setting,replication,method,fpr,fnr,rmse,coverage,ci_length"
    assert len(lines) == 1 + 2 * 2


def test_cli_simulate_is_deterministic(tmp_path):
    cfg = _ini(tmp_path, "[simulate]\nside = 3\nm = 12\ngamma0 = 3\nreplications = 1\n"
                         "[mcmc]\niterations = 60\nburn_in = 10\n")
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a/metrics.csv").read_text()
    assert a == (tmp_path / "b/metrics.csv").read_text()
    assert {r["method"] for r in csv.DictReader(io.StringIO(a))} == {"ST"}


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["fit", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("lon,lat,time,value\n0,0,1,1\n1,0,2,1\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path)]) == 2
