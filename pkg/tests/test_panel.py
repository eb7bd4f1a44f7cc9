import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensoconflict.crop_calendar import assign_gs_enso, crop_year_of, growing_season, postharvest_dummy
from ensoconflict.errors import InputError, SpecError
from ensoconflict.ingest import COUNT_COLUMNS, ConflictPanel, MonthWindow, OniSeries, WeatherPanel
from ensoconflict.panel import (
    DesignSpec,
    build_design,
    build_yield_design,
    cropland_summary,
    qualifying_cells,
    read_cache,
    write_cache,
)

WINDOW = MonthWindow(2000, 6, 2002, 5)
ONI = OniSeries({y: v for y, v in zip(range(1995, 2005), [0.4, -0.9, 2.2, -1.5, -1.1, -0.7, -0.3, 1.1, 0.3, 0.5])})


def toy_profiles(tc=(0.5, 0.0, 0.25)):
    return pd.DataFrame(
        {
            "cell_id": [3, 1, 2],
            "tc_intensity": list(tc),
            "tc_intensity_precip": [tc[0], 0.0, 0.0],
            "tc_intensity_temp": [0.0, 0.0, tc[2]],
            "impact_class": ["NEG", "none", "AMB"],
            "gs_dprecip": [-0.2, np.nan, 0.1],
            "gs_dtmax": [0.3, np.nan, 0.3],
            "tc_months": [(3, 4, 5), (), (10,)],
            "tc_months_precip": [(3, 4, 5), (), ()],
            "tc_months_temp": [(), (), (10,)],
        }
    )


def toy_inputs(cells, seed=0):
    rng = np.random.default_rng(seed)
    ids = np.sort(cells["cell_id"].to_numpy())
    t = WINDOW.n_months
    conflict = ConflictPanel(ids, WINDOW, {c: rng.poisson(0.3, (len(ids), t)) for c in COUNT_COLUMNS})
    weather = WeatherPanel(ids, WINDOW, rng.gamma(2.0, 1.5, (len(ids), t)), rng.normal(28, 2, (len(ids), t)))
    return conflict, weather


@pytest.fixture
def toy(toy_cells):
    conflict, weather = toy_inputs(toy_cells)
    return toy_cells, toy_profiles(), conflict, weather


def design(toy, equation="eq2", oni=ONI, **kw):
    cells, prof, conflict, weather = toy
    return build_design(DesignSpec.for_equation(equation, **kw), cells, prof, conflict, weather, oni)


# --------------------------------------------------------------------------- shape and ordering


@pytest.mark.parametrize("equation", ["eq1", "eq2", "eq3", "eq4", "b16"])
def test_rows_and_names(toy, equation):
    d = design(toy, equation)
    assert d.n == 3 * WINDOW.n_months
    assert d.names == DesignSpec(equation=equation).interaction_names + ["rainfall", "heat"]
    assert d.cell_id[:: WINDOW.n_months].tolist() == [1, 2, 3]
    assert d.fe_names == ["cell", "country_yearmonth"]


def test_no_weather_controls(toy):
    assert design(toy, weather_controls=False).names == ["main", "postharvest"]


@pytest.mark.parametrize("equation", ["eq1", "eq2", "eq3", "eq4", "b16"])
def test_non_cropland_rows_are_zero(toy, equation):
    d = design(toy, equation)
    rows = d.cell_id == 1
    k = len(DesignSpec(equation=equation).interaction_names)
    assert (d.X[rows, :k] == 0).all()


def test_arithmetic_example(toy):
    """AREA 1.2, TC 0.5, ONI 2.0, a postharvest month: both terms equal 1.2."""
    flat = OniSeries({y: 2.0 for y in range(1995, 2005)})
    d = design(toy, oni=flat)
    row = np.flatnonzero((d.cell_id == 3) & (d.month == 8))[0]
    assert d.column("main")[row] == pytest.approx(1.2)
    assert d.column("postharvest")[row] == pytest.approx(1.2)
    row = np.flatnonzero((d.cell_id == 3) & (d.month == 12))[0]
    assert d.column("postharvest")[row] == 0.0


def test_event_study_partition(toy):
    d = design(toy, "eq4")
    assert d.names[:12] == [f"j={j}" for j in range(-4, 8)]
    nonzero = (d.X[:, :12] != 0).sum(axis=1)
    assert nonzero.max() <= 1
    # every cropland row falls in exactly one event bin
    assert (nonzero[d.cell_id != 1] == 1).all()


def test_postharvest_column_is_main_times_mask(small_world):
    d = small_world.design()
    main, post = d.column("main"), d.column("postharvest")
    hm = small_world.cells.set_index("cell_id")["harvest_month"]
    crop = np.isin(d.cell_id, small_world.cells["cell_id"][small_world.cells["cropland_ha"] > 0])
    mask = postharvest_dummy(d.month[crop], hm.loc[d.cell_id[crop]].to_numpy(dtype=int))
    assert np.array_equal(post[crop], main[crop] * mask)
    # the mask covers three months of every complete crop year
    cy = crop_year_of(d.year[crop], d.month[crop], hm.loc[d.cell_id[crop]].to_numpy(dtype=int))
    per_year = pd.DataFrame({"cell": d.cell_id[crop], "cy": cy, "m": mask}).groupby(["cell", "cy"])["m"].agg(["size", "sum"])
    full = per_year[per_year["size"] == 12]
    assert len(full) > 0 and (full["sum"] == 3).all()


def test_main_regressor_matches_calendar_assignment(small_world):
    d = small_world.design()
    prof = small_world.profiles.set_index("cell_id")
    cells = small_world.cells.set_index("cell_id")
    main = d.column("main")
    crop_ids = cells.index[cells["cropland_ha"] > 0][:15]
    for cid in crop_ids:
        c, p = cells.loc[cid], prof.loc[cid]
        if p["tc_intensity"] == 0:
            continue
        cal = growing_season(int(c["plant_month"]), int(c["harvest_month"]))
        rows = np.flatnonzero(d.cell_id == cid)
        for r in rows[::5]:
            cy = crop_year_of(int(d.year[r]), int(d.month[r]), cal.harvest_month)
            value, _ = assign_gs_enso(cal, cy, p["tc_months"], small_world.oni)
            expected = c["cropland_ha"] / 1e4 * p["tc_intensity"] * value
            assert main[r] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_post_planting_uses_lagged_enso(toy):
    flat_shift = design(toy, "b16")
    base = design(toy, "eq1")
    row = np.flatnonzero((flat_shift.cell_id == 3) & (flat_shift.year == 2001) & (flat_shift.month == 9))[0]
    # the Sep 2001 row follows the Aug 2001 harvest; its teleconnected months
    # (Mar-May 2001) lie in ENSO year 2000, and the lag moves that to 1999
    assert base.column("main")[row] == pytest.approx(1.2 * 0.5 * ONI[2000])
    assert flat_shift.column("main")[row] == pytest.approx(1.2 * 0.5 * ONI[1999])
    assert flat_shift.column("postplanting")[row] == 0.0


def test_indicator_swap_changes_only_tc_factor(toy):
    cont = design(toy, tc_threshold=None)
    ind = design(toy, tc_threshold=0.33)
    tc_c = pd.Series({3: 0.5, 1: 0.0, 2: 0.25})[cont.cell_id].to_numpy()
    tc_i = (tc_c > 0.33).astype(float)
    for name in ("main", "postharvest"):
        a, b = cont.column(name), ind.column(name)
        nz = tc_c > 0
        assert np.allclose(a[nz] / tc_c[nz] * tc_i[nz], b[nz], rtol=1e-13, atol=0)
    assert np.array_equal(cont.column("rainfall"), ind.column("rainfall"))
    assert np.array_equal(cont.y, ind.y)


def test_area_indicator_is_strict(toy_cells):
    cells = toy_cells.assign(cropland_ha=[5000.0, 0.0, 5000.01])
    conflict, weather = toy_inputs(cells)
    d = build_design(DesignSpec(equation="eq1", area_threshold_ha=5000), cells, toy_profiles(), conflict, weather, ONI)
    assert (d.column("main")[d.cell_id == 3] == 0).all()
    assert (d.column("main")[d.cell_id == 2] != 0).any()


@settings(max_examples=20, deadline=None)
@given(st.permutations([0, 1, 2]), st.permutations([0, 1, 2]))
def test_invariant_to_input_row_order(perm_cells, perm_prof):
    cells = pd.DataFrame(
        {
            "cell_id": np.array([3, 1, 2], dtype=np.int64),
            "lat": [0.25, 0.25, 0.75],
            "lon": [36.25, 36.75, 36.25],
            "country": ["KEN", "KEN", "UGA"],
            "cropland_ha": [12000.0, 0.0, 5000.0],
            "main_crop": ["maize", "none", "sorghum"],
            "plant_month": pd.array([3, None, 10], dtype="Int64"),
            "harvest_month": pd.array([8, None, 3], dtype="Int64"),
        }
    )
    conflict, weather = toy_inputs(cells)
    prof = toy_profiles()
    ref = build_design(DesignSpec(), cells, prof, conflict, weather, ONI)
    ids = np.array([3, 1, 2])[list(perm_cells)]
    got = build_design(
        DesignSpec(),
        cells.iloc[list(perm_cells)],
        prof.iloc[list(perm_prof)],
        conflict.reorder(ids),
        weather.reorder(ids[::-1]),
        ONI,
    )
    assert np.array_equal(ref.X, got.X) and np.array_equal(ref.y, got.y)
    assert all(np.array_equal(a, b) for a, b in zip(ref.fe, got.fe))


def test_eq3_requires_impact_class(toy):
    cells, prof, conflict, weather = toy
    with pytest.raises(SpecError, match="impact_class"):
        build_design(DesignSpec(equation="eq3"), cells, prof.drop(columns="impact_class"), conflict, weather, ONI)


def test_eq3_splits_by_class(toy):
    d = design(toy, "eq3")
    assert (d.column("main_amb")[d.cell_id == 3] == 0).all()
    assert (d.column("main_neg")[d.cell_id == 2] == 0).all()
    assert np.allclose(d.column("main_neg") + d.column("main_amb"), design(toy, "eq1").column("main"))


def test_window_mismatch(toy):
    cells, prof, conflict, weather = toy
    with pytest.raises(InputError, match="covers"):
        build_design(DesignSpec(), cells, prof, conflict, weather, ONI, window=MonthWindow(2000, 6, 2001, 5))


def test_incidence_and_agrarian_outcomes(toy):
    cells, prof, conflict, weather = toy
    inc = build_design(DesignSpec(outcome="incidence"), cells, prof, conflict, weather, ONI)
    cnt = design(toy)
    assert np.array_equal(inc.y, np.minimum(cnt.y, 1))
    agr = build_design(DesignSpec(outcome="agrarian", kind="two_sided"), cells, prof, conflict, weather, ONI)
    assert np.array_equal(agr.y, conflict.counts["count_two_sided_agrarian"].ravel())


def test_fe_schemes(toy):
    cym = design(toy, fe_scheme="cell+cym")
    ym = design(toy, fe_scheme="cell+ym")
    cy = design(toy, fe_scheme="cell+cy")
    assert len(np.unique(ym.fe[1])) == WINDOW.n_months
    assert len(np.unique(cym.fe[1])) == 2 * WINDOW.n_months  # two countries
    assert len(np.unique(cy.fe[1])) == 2 * 3  # two countries, calendar years 2000-2002


@pytest.mark.parametrize("bad", [{"equation": "eq9"}, {"fe_scheme": "cell"}, {"enso_lag": 2}, {"kind": "both"}])
def test_spec_validation(bad):
    with pytest.raises(SpecError):
        DesignSpec(**bad)


# --------------------------------------------------------------------------- summaries


def test_summary_single_cell_constant_conflict(toy):
    cells, prof, conflict, weather = toy
    prof = prof.assign(tc_intensity=[0.5, 0.0, 0.0])
    outcome = np.zeros((3, WINDOW.n_months))
    outcome[2] = 0.1  # cell 3 sits last in ascending order
    s = cropland_summary(cells, prof, None, DesignSpec(), outcome=outcome)
    assert s.n_cells == 1
    assert (s.mean_conflict, s.mean_tc, s.mean_area) == (pytest.approx(0.1), 0.5, 1.2)


def test_summary_subsets_and_empty_filter(toy):
    cells, prof, conflict, weather = toy
    all_ = cropland_summary(cells, prof, conflict, DesignSpec())
    assert all_.n_cells == 2
    assert all_.mean_area == pytest.approx((1.2 + 0.5) / 2)
    neg = cropland_summary(cells, prof, conflict, DesignSpec(), "NEG")
    assert neg.n_cells == 1 and neg.mean_tc == 0.5
    with pytest.raises(SpecError, match="no qualifying"):
        cropland_summary(cells, prof, conflict, DesignSpec(tc_threshold=0.9))


def test_qualifying_cells_follow_indicator_form(toy):
    cells, prof, _, _ = toy
    assert qualifying_cells(cells, prof, DesignSpec()).tolist() == [False, True, True]
    assert qualifying_cells(cells, prof, DesignSpec(tc_threshold=0.33)).tolist() == [False, False, True]
    assert qualifying_cells(cells, prof, DesignSpec(area_threshold_ha=6000)).tolist() == [False, False, True]


# --------------------------------------------------------------------------- yields


def yield_table(countries, years, value=2.0):
    return pd.DataFrame([(c, y, value) for c in countries for y in years], columns=["country", "year", "yield_t_per_ha"])


def test_yield_design_dimensions():
    countries = [f"C{k:02d}" for k in range(43)]
    years = range(1995, 2020)
    d = build_yield_design(yield_table(countries, years), {c: 0.5 for c in countries}, {y: 0.1 for y in years})
    assert d.n == 1075
    assert d.names == ["weak_tc_x_enso", "tc_x_enso"]


@pytest.mark.parametrize("tc, first, second", [(0.0, 1.0, 0.0), (1.0, 0.0, 1.0), (0.25, 0.75, 0.25)])
def test_yield_regressors(tc, first, second):
    years = range(2000, 2005)
    oni = {y: 1.5 for y in years}
    d = build_yield_design(yield_table(["A"], years), {"A": tc}, oni)
    assert np.allclose(d.X[:, 0], first * 1.5)
    assert np.allclose(d.X[:, 1], second * 1.5)
    assert np.allclose(d.y, np.log(2.0))


def test_yield_errors():
    years = range(2000, 2005)
    t = yield_table(["A", "B"], years)
    t.loc[3, "yield_t_per_ha"] = 0.0
    with pytest.raises(InputError, match="non-positive yield 0.0 for A 2003"):
        build_yield_design(t, {"A": 0.1, "B": 0.2}, {y: 0.0 for y in years})
    with pytest.raises(InputError, match="balanced"):
        build_yield_design(yield_table(["A"], years).iloc[1:].pipe(lambda d: pd.concat([d, yield_table(["B"], years)])), {"A": 0, "B": 0}, {y: 0 for y in years})


# --------------------------------------------------------------------------- cache


def test_cache_round_trip(tmp_path, toy):
    d = design(toy, "eq3")
    path = tmp_path / "panel.bin"
    write_cache(d, path)
    back = read_cache(path)
    assert back.names == d.names and back.fe_names == d.fe_names
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)
    assert all(np.array_equal(a, b) for a, b in zip(back.fe, d.fe))
    assert np.array_equal(back.coords, d.coords)
    assert np.array_equal(back.cell_id, d.cell_id)
    assert back.meta["spec"]["equation"] == "eq3"
    raw = path.read_bytes()
    assert raw[:8] == b"ENSOPNL\x00"


def test_cache_rejects_other_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a cache at all")
    with pytest.raises(InputError, match="not a panel cache"):
        read_cache(p)
