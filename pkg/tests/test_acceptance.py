"""Acceptance criteria, one group of tests per criterion.

Each test carries ``@pytest.mark.criterion(n)``; the conftest prints one
PASS/FAIL line per criterion at the end of the run.
"""
import math
import time
from dataclasses import replace
from itertools import product

import numpy as np
import pandas as pd
import pytest
from _panels import brute_conley_meat, random_design

from ensoconflict import estimator, inference
from ensoconflict.cli import run
from ensoconflict.crop_calendar import EVENT_OFFSETS, event_offset, growing_season, postharvest_dummy, postplanting_dummy
from ensoconflict.ingest import MonthWindow, aggregate_events
from ensoconflict.panel import CroplandSummary, DesignMatrix, DesignSpec, build_yield_design
from ensoconflict.synth import SynthConfig, dense_oracle, gen_conflict, gen_world, monte_carlo
from ensoconflict.teleconnection import fit_all

# --------------------------------------------------------------------------- 1. effect arithmetic

# (label, betas, mean_tc, mean_area, mean_conflict, link, expected computed value, reported value)
EFFECT_CASES = [
    ("single term one-sided", [-0.0019], 0.557, 0.976, 0.053, "linear", -1.95, -2.0),
    ("single term two-sided", [-0.0013], 0.557, 0.976, 0.058, "linear", -1.22, -1.2),
    ("two terms one-sided", [-0.0015, -0.0019], 0.557, 0.976, 0.053, "linear", -3.49, -3.4),
    ("two terms two-sided", [-0.0008, -0.0021], 0.557, 0.976, 0.058, "linear", -2.72, -2.7),
    ("tc indicator one-sided", [-0.0009, -0.0010], None, 1.005, 0.051, "linear", -3.74, -3.7),
    ("tc indicator two-sided", [-0.0003, -0.0012], None, 1.005, 0.054, "linear", -2.79, -2.8),
    ("poisson first", [0.0296, -0.0317], None, None, None, "poisson", -0.21, -0.2),
    ("poisson second", [-0.0242, -0.0401], None, None, None, "poisson", -6.23, -6.2),
]


@pytest.mark.criterion(1)
@pytest.mark.parametrize("label, betas, tc, area, conflict, link, computed, reported", EFFECT_CASES, ids=[c[0] for c in EFFECT_CASES])
def test_effect_formula_matches_reported(label, betas, tc, area, conflict, link, computed, reported):
    names = [f"b{k}" for k in range(len(betas))]
    coef = dict(zip(names, betas))
    t0 = time.perf_counter()
    if link == "poisson":
        e = inference.poisson_effect_pct(coef, None, names, label=label)
    else:
        summary = CroplandSummary(mean_tc=tc or 1.0, mean_area=area, mean_conflict=conflict, n_cells=0, cell_filter="")
        e = inference.linear_effect_pct(coef, None, names, summary, use_tc=tc is not None, label=label)
    elapsed = time.perf_counter() - t0
    assert round(e.pct, 2) == pytest.approx(computed, abs=1e-9)
    assert abs(e.pct - reported) <= 0.15
    assert not inference.reported_discrepancy(e.pct, reported)
    assert elapsed < 0.01


# --------------------------------------------------------------------------- 2. panel dimensions


@pytest.mark.criterion(2)
def test_full_scale_cell_panel_rows():
    window = MonthWindow.parse("1997-06:2024-05")
    cfg = SynthConfig(n_cells=10_223, n_countries=40, weather_window=str(window), conflict_window=str(window), seed=1)
    world = gen_world(cfg)
    panel, report = aggregate_events([], world.cells, window)
    assert panel.n_rows == 3_312_252
    design = world.design()
    assert design.n == 3_312_252
    assert design.X.shape == (3_312_252, 4)
    assert len(np.unique(design.fe[0])) == 10_223


@pytest.mark.criterion(2)
def test_yield_design_rows():
    countries = [f"C{k:02d}" for k in range(43)]
    years = list(range(1995, 2020))
    yields = pd.DataFrame([(c, y, 1.5) for c in countries for y in years], columns=["country", "year", "yield_t_per_ha"])
    d = build_yield_design(yields, {c: 0.5 for c in countries}, {y: 0.0 for y in years})
    assert d.n == 1_075


# --------------------------------------------------------------------------- 3. oracle equivalence


def oracle_panels(n_panels=60, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_panels:
        n_units, n_periods = int(rng.integers(3, 120)), int(rng.integers(3, 120))
        if n_units * n_periods > 10_000:
            continue
        d, _ = random_design(rng, n_units, n_periods, k=int(rng.integers(1, 5)), unbalanced=bool(rng.random() < 0.5))
        out.append(d)
    return out


@pytest.mark.criterion(3)
def test_hdfe_ols_matches_dense_oracle_on_random_panels():
    panels = oracle_panels()
    assert len(panels) >= 50
    assert max(d.n for d in panels) <= 10_000
    worst = 0.0
    t0 = time.perf_counter()
    for d in panels:
        worst = max(worst, float(np.abs(estimator.hdfe_ols(d).beta - dense_oracle(d).beta).max()))
    assert worst < 1e-8
    assert time.perf_counter() - t0 < 120


@pytest.mark.criterion(3)
def test_oracle_on_synthetic_world_design(small_world):
    d = replace(small_world.design(), y=gen_conflict(small_world).ravel())
    assert d.n <= 10_000
    assert np.abs(estimator.hdfe_ols(d).beta - dense_oracle(d).beta).max() < 1e-8


# --------------------------------------------------------------------------- 4. Conley degeneracies


def rel_close(a, b, tol=1e-12):
    return np.abs(a - b).max() <= tol * max(np.abs(b).max(), 1e-300)


@pytest.mark.criterion(4)
@pytest.mark.parametrize("seed", range(5))
def test_conley_degenerates_to_hc0_and_period_clusters(seed):
    rng = np.random.default_rng(seed)
    d, _ = random_design(rng, 25, 15, k=3)
    fit = estimator.hdfe_ols(d)
    lat, lon = d.coords[:, 0], d.coords[:, 1]
    locs = np.unique(d.coords, axis=0)
    dmin = min(
        inference.haversine_km(*locs[i], *locs[j]) for i in range(len(locs)) for j in range(i + 1, len(locs))
    )
    assert rel_close(inference.conley_cov(fit, cutoff_km=0.5 * dmin).vcov, inference.hc0(fit).vcov)
    by_period = inference.cluster_cov(fit, cluster=d.period)
    assert rel_close(inference.conley_cov(fit, cutoff_km=math.inf).vcov, by_period.vcov)
    assert lat.shape == lon.shape


@pytest.mark.criterion(4)
def test_conley_three_cells_two_periods_hand_double_sum():
    coords = np.array([[0.0, 0.0], [0.0, 3.0], [0.0, 6.0]])  # 333.6 km apart
    cell = np.repeat(np.arange(3), 2)
    period = np.tile(np.arange(2), 3)
    X = np.array([[1.0, 0.5], [2.0, -1.0], [0.5, 1.5], [-1.0, 2.0], [3.0, 0.0], [1.0, 1.0]])
    y = np.array([0.3, -1.2, 2.0, 0.7, 1.1, -0.4])
    d = DesignMatrix(y=y, X=X, names=["a", "b"], fe=[], fe_names=[], coords=coords[cell], period=period)
    fit = estimator.hdfe_ols(d)
    s = fit.scores
    # by hand: at 400 km each period pairs (0,1) and (1,2) but not (0,2)
    M = np.zeros((2, 2))
    for t in range(2):
        rows = {c: int(np.flatnonzero((cell == c) & (period == t))[0]) for c in range(3)}
        for a, b in [(0, 0), (1, 1), (2, 2), (0, 1), (1, 0), (1, 2), (2, 1)]:
            M += np.outer(s[rows[a]], s[rows[b]])
    bread = np.linalg.inv(X.T @ X)
    assert rel_close(inference.conley_cov(fit, cutoff_km=400.0).vcov, bread @ M @ bread)
    brute = brute_conley_meat(s, d.coords, period, 400.0)
    assert rel_close(brute, M)


# --------------------------------------------------------------------------- 5. Monte Carlo recovery


@pytest.mark.criterion(5)
@pytest.mark.slow
def test_monte_carlo_recovery_and_conley_coverage():
    cfg = SynthConfig(n_cells=500, grid_step_deg=2.0, seed=7)
    assert MonthWindow.parse(cfg.conflict_window).n_months == 120
    assert (cfg.beta1, cfg.beta2) == (-0.0015, -0.0019)
    t0 = time.perf_counter()
    rep = monte_carlo(cfg, 200)
    elapsed = time.perf_counter() - t0
    t = rep.table.set_index("term")
    print("\n" + rep.table.to_string())
    for term in ("main", "postharvest"):
        assert abs(t.loc[term, "bias"]) <= 2 * t.loc[term, "mc_se"], term
        assert 0.90 <= t.loc[term, "coverage_conley"] <= 1.00, term
    assert elapsed < 600


# --------------------------------------------------------------------------- 6. teleconnection size and recovery


@pytest.mark.criterion(6)
def test_teleconnection_size_under_null():
    w = gen_world(SynthConfig(n_cells=1_200, teleconnected_fraction=0.0, seed=61))
    fp = fit_all(w.weather.precip, w.weather.window, w.oni)
    ft = fit_all(w.weather.tmax, w.weather.window, w.oni)
    # one calendar month per cell keeps the tests independent (neighbouring
    # months share two of their three averaged values)
    month = np.arange(len(w.cells)) % 12
    rows = np.arange(len(w.cells))
    for f in (fp, ft):
        p = f.p_value[rows, month]
        assert len(p) >= 1_000
        assert abs((p < 0.05).mean() - 0.05) <= 0.02


@pytest.mark.criterion(6)
def test_planted_betas_recovered():
    cfg = SynthConfig(n_cells=300, teleconnected_fraction=1.0, precip_noise=0.1, seed=62)
    w = gen_world(cfg)
    assert MonthWindow.parse(cfg.weather_window).n_months // 12 == 45
    fp = fit_all(w.weather.precip, w.weather.window, w.oni)
    # May and June averages straddle two ENSO years, so they are left out
    cols = [m - 1 for m in range(1, 13) if m not in (5, 6)]
    assert (np.abs(fp.beta[:, cols] - cfg.b_precip) <= 0.05).mean() >= 0.95


# --------------------------------------------------------------------------- 7. calendar bijection


@pytest.mark.criterion(7)
def test_event_offset_bijection_all_harvest_months():
    for harvest, start in product(range(1, 13), range(1, 13)):
        months = [(start - 1 + k) % 12 + 1 for k in range(12)]
        offsets = sorted(event_offset(m, harvest) for m in months)
        assert offsets == list(EVENT_OFFSETS) == list(range(-4, 8))


@pytest.mark.criterion(7)
def test_postharvest_and_postplanting_masks_sum_to_three():
    for plant, harvest in product(range(1, 13), range(1, 13)):
        try:
            growing_season(plant, harvest)
        except Exception:
            continue
        crop_year = [(harvest - 1 + k) % 12 + 1 for k in range(12)]
        assert sum(postharvest_dummy(m, harvest) for m in crop_year) == 3
        assert sum(postplanting_dummy(m, plant) for m in crop_year) == 3


# --------------------------------------------------------------------------- 8. performance


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_full_period_estimation_speed():
    cfg = SynthConfig(
        n_cells=1_000, weather_window="1979-06:2024-05", conflict_window="1997-06:2024-05", seed=8
    )
    world = gen_world(cfg)
    design = replace(world.design(), y=gen_conflict(world).ravel())
    assert design.n == 324_000
    t0 = time.perf_counter()
    fit = estimator.hdfe_ols(design)
    cov = inference.conley_cov(fit, cutoff_km=500.0)
    elapsed = time.perf_counter() - t0
    print(f"\nestimation {elapsed:.1f}s, absorb iterations {fit.absorb_iterations}")
    assert np.isfinite(cov.se).all()
    assert fit.absorb_iterations < 200
    assert elapsed < 60


# --------------------------------------------------------------------------- 9. determinism


def pipeline(root, cfg_path):
    data, out = root / "data", root / "out"
    assert run(["synth", "gen", "--config", str(cfg_path), "--out", str(data)]) == 0
    common = ["--cells", str(data / "cells.csv"), "--oni", str(data / "oni.csv"), "--window", "2014-06:2024-05"]
    assert run(["teleconnect", "--cells", str(data / "cells.csv"), "--weather", str(data / "weather.csv"),
                "--oni", str(data / "oni.csv"), "--dump-fits", "--out", str(out / "tele")]) == 0
    prof = ["--profiles", str(out / "tele" / "teleconnections.csv"), "--weather", str(data / "weather.csv")]
    events = ["--events", str(data / "events.csv")]
    assert run(["build-panel", *common, *prof, *events, "--out", str(out / "panel")]) == 0
    assert run(["estimate", "--panel", str(out / "panel" / "panel.bin"), "--out", str(out / "est")]) == 0
    assert run(["estimate", *common, *prof, *events, "--estimator", "ppml", "--out", str(out / "ppml")]) == 0
    assert run(["event-study", *common, *prof, *events, "--out", str(out / "es")]) == 0
    assert run(["effects", "--results", str(out / "est" / "results.csv"), "--vcov", str(out / "est" / "vcov.csv"),
                "--summary", str(out / "est" / "summary.csv"), "--out", str(out / "eff")]) == 0
    assert run(["report", "--results", str(out / "est" / "results.csv"), "--effects", str(out / "est" / "effects.csv"),
                "--out", str(out / "report")]) == 0
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


@pytest.mark.criterion(9)
def test_pipeline_is_byte_identical(tmp_path, capsys):
    cfg = tmp_path / "world.toml"
    cfg.write_text('[synth]\nn_cells = 40\nseed = 99\nlink = "poisson"\nbaseline = 0.4\nweather_window = "1989-06:2024-05"\n')
    a = pipeline(tmp_path / "a", cfg)
    b = pipeline(tmp_path / "b", cfg)
    capsys.readouterr()
    assert len(a) >= 15
    assert a.keys() == b.keys()
    differing = [str(k) for k in a if a[k] != b[k]]
    assert differing == []
