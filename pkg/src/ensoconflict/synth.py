"""Synthetic worlds with a known data-generating process.

A world is a rectangular block of grid cells split into latitude-band
countries, an AR(1) December ONI series, and monthly weather built as a
cell-month baseline plus a planted ONI response and a trend plus noise.
Conflict outcomes follow the post-harvest design: cell and country-month
effects plus ``beta1 * AREA x TC x ENSO`` and ``beta2`` times the same
exposure in post-harvest months. The exposure is computed from the
teleconnection profiles *estimated* on the world, so the DGP regressors and
the estimation regressors coincide.

Randomness: numpy's Philox counter-based generator, keyed by
``SeedSequence([seed, stream, rep])``. Stream 0 draws the world, stream 1 the
conflict outcome of replication ``rep``, stream 2 the event decoration, so
every replication is reproducible on its own and in any order.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from ensoconflict import estimator, inference
from ensoconflict.crop_calendar import MAX_GS_LENGTH, MIN_GS_LENGTH, enso_year_of
from ensoconflict.errors import SpecError
from ensoconflict.ingest import ConflictPanel, MonthWindow, OniSeries, WeatherPanel, write_csv
from ensoconflict.panel import DesignMatrix, DesignSpec, build_design, country_aggregates
from ensoconflict.teleconnection import profiles as estimate_profiles

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

RNG_NAME = f"numpy.random.Philox (numpy {np.__version__.split('.')[0]}.x)"
ORACLE_MAX_ROWS = 10_000
STREAM_WORLD, STREAM_CONFLICT, STREAM_EVENTS = 0, 1, 2
CROP_CHOICES = ("maize", "sorghum", "millet", "rice", "wheat")


def rng_for(seed: int, stream: int, rep: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, rep])))


@dataclass(frozen=True)
class SynthConfig:
    n_cells: int = 200
    n_countries: int = 4
    lat0: float = -10.25
    lon0: float = 20.25
    grid_step_deg: float = 0.5
    cropland_fraction: float = 0.7
    log_area_mean: float = 9.0
    log_area_sd: float = 0.6
    cluster_deg: float = 0.0
    area_block_share: float = 0.0
    gs_min: int = 3
    gs_max: int = 7
    teleconnected_fraction: float = 0.6
    b_precip: float = -0.4
    b_tmax: float = 0.3
    precip_noise: float = 0.3
    tmax_noise: float = 0.3
    precip_trend: float = 0.0
    tmax_trend: float = 0.02
    oni_phi: float = 0.6
    oni_innovation_sd: float = 0.8
    weather_window: str = "1979-06:2024-05"
    conflict_window: str = "2014-06:2024-05"
    link: str = "linear"
    beta1: float = -0.0015
    beta2: float = -0.0019
    gamma_rain: float = 0.0
    gamma_heat: float = 0.0
    baseline: float = 0.05
    cell_effect_sd: float = 0.02
    period_effect_sd: float = 0.01
    noise_sd: float = 0.05
    spatial_share: float = 0.0
    spatial_block_deg: float = 4.0
    two_sided_baseline: float = 0.03
    agrarian_share: float = 0.3
    yield_alpha0: float = 0.0
    yield_alpha1: float = -0.03
    yield_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in (
            "cropland_fraction",
            "teleconnected_fraction",
            "spatial_share",
            "agrarian_share",
            "area_block_share",
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1]")
        if self.n_cells < 4:
            raise SpecError("n_cells must be at least 4")
        if not 1 <= self.n_countries <= self.n_cells:
            raise SpecError("n_countries must be between 1 and n_cells")
        if not MIN_GS_LENGTH <= self.gs_min <= self.gs_max <= MAX_GS_LENGTH:
            raise SpecError(f"need {MIN_GS_LENGTH} <= gs_min <= gs_max <= {MAX_GS_LENGTH}")
        if self.link not in ("linear", "poisson"):
            raise SpecError("link must be linear or poisson")
        step = self.grid_step_deg
        if step <= 0 or abs(step / 0.5 - round(step / 0.5)) > 1e-9:
            raise SpecError("grid_step_deg must be a positive multiple of 0.5")
        for name in ("lat0", "lon0"):
            v = getattr(self, name)
            if abs((v - 0.25) / 0.5 - round((v - 0.25) / 0.5)) > 1e-9:
                raise SpecError(f"{name} must be a 0.5 degree cell center")
        w, c = MonthWindow.parse(self.weather_window), MonthWindow.parse(self.conflict_window)
        if c.start_index < w.start_index or c.end_index > w.end_index:
            raise SpecError("conflict window must lie inside the weather window")

    @classmethod
    def from_toml(cls, path, **overrides) -> "SynthConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("synth", data)
        return cls.from_dict({**data, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise SpecError(f"unknown synth config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class World:
    cfg: SynthConfig
    cells: pd.DataFrame
    oni: OniSeries
    weather: WeatherPanel
    teleconnected: np.ndarray
    conflict_window: MonthWindow
    _profiles: pd.DataFrame | None = field(default=None, repr=False)
    _design: DesignMatrix | None = field(default=None, repr=False)

    @property
    def profiles(self) -> pd.DataFrame:
        if self._profiles is None:
            self._profiles = estimate_profiles(self.cells, self.weather, self.oni)[0]
        return self._profiles

    def design(self, spec: DesignSpec | None = None) -> DesignMatrix:
        """Post-harvest design on the conflict window, with a placeholder outcome."""
        if spec is not None:
            return _design(self, spec)
        if self._design is None:
            self._design = _design(self, DesignSpec(equation="eq2"))
        return self._design


def _design(world: World, spec: DesignSpec) -> DesignMatrix:
    win = world.conflict_window
    zeros = np.zeros((len(world.cells), win.n_months))
    return build_design(
        spec, world.cells, world.profiles, None, world.weather, world.oni, window=win, outcome=zeros
    )


# --------------------------------------------------------------------------- world


def _grid(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_lon = math.ceil(math.sqrt(cfg.n_cells))
    k = np.arange(cfg.n_cells)
    row, col = k // n_lon, k % n_lon
    lat = np.round(cfg.lat0 + row * cfg.grid_step_deg, 6)
    lon = np.round(cfg.lon0 + col * cfg.grid_step_deg, 6)
    if np.abs(lat).max() > 90 or np.abs(lon).max() > 180:
        raise SpecError("synthetic grid leaves the globe; move lat0/lon0 or shrink the world")
    n_rows = row.max() + 1
    country = row * cfg.n_countries // n_rows
    return lat, lon, country


def gen_oni(cfg: SynthConfig, first_year: int, last_year: int, rng: np.random.Generator) -> OniSeries:
    n = last_year - first_year + 1
    sd0 = cfg.oni_innovation_sd / math.sqrt(1 - cfg.oni_phi**2)
    x = np.empty(n)
    x[0] = rng.normal(0.0, sd0)
    shocks = rng.normal(0.0, cfg.oni_innovation_sd, n)
    for t in range(1, n):
        x[t] = cfg.oni_phi * x[t - 1] + shocks[t]
    return OniSeries(dict(zip(range(first_year, last_year + 1), np.round(x, 2).tolist())))


def gen_world(cfg: SynthConfig) -> World:
    rng = rng_for(cfg.seed, STREAM_WORLD)
    n = cfg.n_cells
    lat, lon, country = _grid(cfg)
    has = rng.random(n) < cfg.cropland_fraction
    # keep at least two cropland cells so the exposure regressors exist
    if has.sum() < 2:
        has[:2] = True
    # with cluster_deg > 0, calendars, teleconnection and part of the cropland
    # size are shared within square blocks, giving spatially correlated exposure
    block = _block_codes(lat, lon, cfg.cluster_deg) if cfg.cluster_deg > 0 else np.arange(n)
    n_blocks = block.max() + 1
    log_area = cfg.log_area_mean + cfg.log_area_sd * (
        math.sqrt(cfg.area_block_share) * rng.normal(0, 1, n_blocks)[block]
        + math.sqrt(1 - cfg.area_block_share) * rng.normal(0, 1, n)
    )
    area = np.where(has, np.maximum(np.round(np.exp(log_area), 0), 1.0), 0.0)
    crop = np.where(has, rng.choice(np.array(CROP_CHOICES), n), "none")
    length = rng.integers(cfg.gs_min, cfg.gs_max + 1, n_blocks)[block]
    plant = rng.integers(1, 13, n_blocks)[block]
    harvest = (plant - 1 + length - 1) % 12 + 1
    cells = pd.DataFrame(
        {
            "cell_id": np.arange(1, n + 1, dtype=np.int64),
            "lat": lat,
            "lon": lon,
            "country": [f"C{c + 1:02d}" for c in country],
            "cropland_ha": area,
            "main_crop": crop,
            "plant_month": pd.array(np.where(has, plant, 0), dtype="Int64"),
            "harvest_month": pd.array(np.where(has, harvest, 0), dtype="Int64"),
        }
    )
    cells.loc[~has, ["plant_month", "harvest_month"]] = pd.NA
    tele = (rng.random(n_blocks) < cfg.teleconnected_fraction)[block]

    wwin = MonthWindow.parse(cfg.weather_window)
    cwin = MonthWindow.parse(cfg.conflict_window)
    years, months = wwin.years_months()
    ey = enso_year_of(years, months)
    # one spare year on each side covers the previous-year growing-season rule and lags
    first = int(min(ey.min(), enso_year_of(cwin.start_year, cwin.start_month))) - 2
    last = int(ey.max()) + 1
    oni = gen_oni(cfg, first, last, rng)
    x = oni.lookup(ey)[None, :]
    trend_years = ((wwin.indices() - wwin.start_index) / 12.0)[None, :]
    t = wwin.n_months
    phase = rng.uniform(0, 2 * np.pi, n)[:, None]
    season = np.sin(2 * np.pi * months[None, :] / 12.0 + phase)
    p_base = rng.uniform(3.0, 6.0, n)[:, None] + 1.5 * season
    t_base = rng.uniform(26.0, 34.0, n)[:, None] + 3.0 * season
    bp = np.where(tele, cfg.b_precip, 0.0)[:, None]
    bt = np.where(tele, cfg.b_tmax, 0.0)[:, None]
    precip = p_base + bp * x + cfg.precip_trend * trend_years + rng.normal(0, cfg.precip_noise, (n, t))
    tmax = t_base + bt * x + cfg.tmax_trend * trend_years + rng.normal(0, cfg.tmax_noise, (n, t))
    weather = WeatherPanel(
        cells["cell_id"].to_numpy(),
        wwin,
        np.round(np.maximum(precip, 0.0), 4),
        np.round(tmax, 4),
    )
    return World(cfg, cells, oni, weather, tele, cwin)


# --------------------------------------------------------------------------- conflict


def _block_codes(lat: np.ndarray, lon: np.ndarray, step: float) -> np.ndarray:
    key = np.floor(lat / step).astype(np.int64) * 100_000 + np.floor(lon / step).astype(np.int64)
    return np.unique(key, return_inverse=True)[1].ravel()


def _blocks(world: World) -> np.ndarray:
    return _block_codes(world.cells["lat"].to_numpy(), world.cells["lon"].to_numpy(), world.cfg.spatial_block_deg)


def linear_index(world: World, rng: np.random.Generator, design: DesignMatrix | None = None) -> np.ndarray:
    """Cell effect + country-month effect + planted slopes; ``(n_cells, n_months)``."""
    cfg = world.cfg
    d = design if design is not None else world.design()
    n, t = len(world.cells), world.conflict_window.n_months
    idx = cfg.baseline + rng.normal(0, cfg.cell_effect_sd, n)[:, None]
    ctry = pd.factorize(world.cells["country"], sort=True)[0]
    idx = idx + rng.normal(0, cfg.period_effect_sd, (ctry.max() + 1, t))[ctry]
    slopes = {"main": cfg.beta1, "postharvest": cfg.beta2, "rainfall": cfg.gamma_rain, "heat": cfg.gamma_heat}
    for name, b in slopes.items():
        if b and name in d.names:
            idx = idx + b * d.column(name).reshape(n, t)
    return idx


def gen_conflict(world: World, cfg: SynthConfig | None = None, rep: int = 0):
    """One outcome draw. Linear link: real-valued ``(n_cells, n_months)`` array.
    Poisson link: a :class:`ConflictPanel` of counts.
    """
    cfg = cfg or world.cfg
    world = world if cfg is world.cfg else replace(world, cfg=cfg)
    rng = rng_for(cfg.seed, STREAM_CONFLICT, rep)
    idx = linear_index(world, rng)
    n, t = idx.shape
    if cfg.link == "linear":
        iid = rng.normal(0, 1, (n, t))
        blocks = _blocks(world)
        shared = rng.normal(0, 1, (blocks.max() + 1, t))[blocks]
        noise = math.sqrt(1 - cfg.spatial_share) * iid + math.sqrt(cfg.spatial_share) * shared
        return idx + cfg.noise_sd * noise

    # log-mean: the slopes enter on the log scale around log(baseline)
    log_mu = np.log(cfg.baseline) + (idx - cfg.baseline)
    if cfg.spatial_share > 0:
        blocks = _blocks(world)
        log_mu = log_mu + cfg.noise_sd * math.sqrt(cfg.spatial_share) * rng.normal(0, 1, (blocks.max() + 1, t))[blocks]
    if not np.isfinite(log_mu).all() or log_mu.max() > 30:
        raise SpecError("Poisson mean overflows; use smaller betas or effect scales")
    mu = np.exp(log_mu)
    mu *= cfg.baseline / mu.mean()
    one = rng.poisson(mu)
    two = rng.poisson(cfg.two_sided_baseline, (n, t))
    counts = {
        "count_one_sided": one,
        "count_two_sided": two,
        "count_one_sided_agrarian": rng.binomial(one, cfg.agrarian_share),
        "count_two_sided_agrarian": rng.binomial(two, cfg.agrarian_share),
    }
    return ConflictPanel(world.cells["cell_id"].to_numpy(), world.conflict_window, counts)


AGRARIAN_NOTES = (
    "raiders stole grain from a farmer near the village",
    "militants looted cattle and burned crops",
    "armed men attacked herders and took their livestock",
)
OTHER_NOTES = (
    "armed group clashed with security forces",
    "unidentified gunmen attacked a checkpoint",
    "protesters were dispersed near the district office",
)


def events_from_counts(conflict: ConflictPanel, cells: pd.DataFrame, seed: int) -> pd.DataFrame:
    """Point events that grid back to exactly the given counts."""
    rng = rng_for(seed, STREAM_EVENTS)
    years, months = conflict.window.years_months()
    lat, lon = cells["lat"].to_numpy(), cells["lon"].to_numpy()
    frames = []
    for kind in ("one_sided", "two_sided"):
        total = conflict.counts[f"count_{kind}"]
        agr = conflict.counts[f"count_{kind}_agrarian"]
        for counts, agrarian in ((agr, True), (total - agr, False)):
            i, t = np.nonzero(counts)
            reps = counts[i, t]
            i, t = np.repeat(i, reps), np.repeat(t, reps)
            m = len(i)
            day = rng.integers(1, 29, m)
            notes = np.array(AGRARIAN_NOTES if agrarian else OTHER_NOTES)[rng.integers(0, 3, m)]
            frames.append(
                pd.DataFrame(
                    {
                        "date": [f"{y:04d}-{mo:02d}-{d:02d}" for y, mo, d in zip(years[t], months[t], day)],
                        "lat": np.round(lat[i] + rng.uniform(-0.24, 0.24, m), 4),
                        "lon": np.round(lon[i] + rng.uniform(-0.24, 0.24, m), 4),
                        "kind": kind,
                        "notes": notes,
                    }
                )
            )
    df = pd.concat(frames, ignore_index=True).sort_values(["date", "lat", "lon"], kind="stable")
    df.insert(0, "event_id", [f"SYN{k:07d}" for k in range(1, len(df) + 1)])
    return df.reset_index(drop=True)


def gen_yields(world: World) -> pd.DataFrame:
    """Country log yields with planted ENSO slopes for weakly/strongly teleconnected shares."""
    cfg = world.cfg
    rng = rng_for(cfg.seed, STREAM_EVENTS, 1)
    win = world.conflict_window
    years = list(range(win.start_year, win.end_year + 1))
    tc, enso = country_aggregates(world.cells, world.profiles, world.oni, years)
    enso = enso.sort_values(["country", "year"], kind="stable").reset_index(drop=True)
    tcv = enso["country"].map(tc).to_numpy(dtype=float)
    level = {c: rng.normal(0.5, 0.3) for c in sorted(tc)}
    slope = {c: rng.normal(0.01, 0.005) for c in sorted(tc)}
    t = enso["year"].to_numpy() - years[0]
    log_y = (
        enso["country"].map(level).to_numpy(dtype=float)
        + enso["country"].map(slope).to_numpy(dtype=float) * t
        + cfg.yield_alpha0 * (1 - tcv) * enso["enso"].to_numpy()
        + cfg.yield_alpha1 * tcv * enso["enso"].to_numpy()
        + rng.normal(0, cfg.yield_noise, len(enso))
    )
    return pd.DataFrame({"country": enso["country"], "year": enso["year"], "yield_t_per_ha": np.round(np.exp(log_y), 6)})


def outcome_frame(y: np.ndarray, cells: pd.DataFrame, window: MonthWindow) -> pd.DataFrame:
    years, months = window.years_months()
    n, t = y.shape
    return pd.DataFrame(
        {
            "cell_id": np.repeat(cells["cell_id"].to_numpy(), t),
            "year": np.tile(years, n),
            "month": np.tile(months, n),
            "y": y.ravel(),
        }
    )


def write_world(world: World, out_dir, rep: int = 0) -> dict[str, Path]:
    """Write the standard input CSVs (plus ``truth.json``) for one outcome draw."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("cells", "weather", "oni")}
    cells = world.cells.copy()
    write_csv(cells, paths["cells"])
    write_csv(world.weather.to_frame(), paths["weather"])
    write_csv(world.oni.to_frame(), paths["oni"])
    paths["yields"] = out / "yields.csv"
    write_csv(gen_yields(world), paths["yields"])
    draw = gen_conflict(world, rep=rep)
    if world.cfg.link == "linear":
        paths["outcome"] = out / "outcome.csv"
        write_csv(outcome_frame(draw, world.cells, world.conflict_window), paths["outcome"])
    else:
        paths["events"] = out / "events.csv"
        write_csv(events_from_counts(draw, world.cells, world.cfg.seed), paths["events"])
    truth = {
        "config": world.cfg.to_dict(),
        "rng": RNG_NAME,
        "teleconnected_cell_ids": world.cells["cell_id"][world.teleconnected].tolist(),
        "beta": {"main": world.cfg.beta1, "postharvest": world.cfg.beta2},
    }
    paths["truth"] = out / "truth.json"
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return paths


# --------------------------------------------------------------------------- oracle


def dense_oracle(design: DesignMatrix) -> estimator.RegressionFit:
    """OLS with explicit dummy columns for every fixed-effect factor.

    An intercept plus one dummy per level, with the first level of each factor
    as reference. Any remaining dependence among the dummies (e.g. nested
    factors) is handled by the minimum-norm least-squares solution, which leaves
    the identified slope coefficients unique.
    """
    if design.n > ORACLE_MAX_ROWS:
        raise SpecError(f"dense oracle refuses {design.n} rows (limit {ORACLE_MAX_ROWS})")
    blocks = [np.ones((design.n, 1))]
    for codes in design.fe:
        levels, inv = np.unique(codes, return_inverse=True)
        D = np.zeros((design.n, len(levels)))
        D[np.arange(design.n), inv] = 1.0
        blocks.append(D[:, 1:])
    Z = np.column_stack(blocks)
    k = len(design.names)
    full = np.column_stack([design.X, Z])
    coef = np.linalg.lstsq(full, design.y, rcond=None)[0]
    resid = design.y - full @ coef
    # partialled-out regressors for covariance use (Frisch-Waugh-Lovell)
    Xt = design.X - Z @ np.linalg.lstsq(Z, design.X, rcond=None)[0]
    return estimator.RegressionFit(
        names=list(design.names),
        beta=coef[:k],
        residuals=resid,
        demeaned_X=Xt,
        weights=np.ones(design.n),
        kept_rows=np.arange(design.n),
        dropped_rows=np.array([], dtype=np.intp),
        n_effective=design.n,
        converged=True,
        iterations=1,
        objective_trace=[float(resid @ resid)],
        method="dense_oracle",
        design=design,
        fitted=design.y - resid,
    )


# --------------------------------------------------------------------------- Monte Carlo


@dataclass
class MonteCarloReport:
    table: pd.DataFrame
    n_reps: int
    cutoff_km: float

    def row(self, term: str) -> pd.Series:
        return self.table.set_index("term").loc[term]


def true_coefficients(cfg: SynthConfig, names: list[str]) -> np.ndarray:
    truth = {"main": cfg.beta1, "postharvest": cfg.beta2, "rainfall": cfg.gamma_rain, "heat": cfg.gamma_heat}
    return np.array([truth.get(n, 0.0) for n in names])


def monte_carlo(
    cfg: SynthConfig,
    n_reps: int,
    *,
    cutoff_km: float = 500.0,
    kernel: str = "uniform",
    world: World | None = None,
    min_reps: int = 100,
) -> MonteCarloReport:
    """Redraw outcomes on a fixed world, re-estimate, and summarise the sampling distribution.

    Reports, per coefficient, the mean estimate, bias, RMSE, the Monte Carlo
    standard error of the mean, and 95% CI coverage under Conley and HC0
    standard errors.
    """
    if n_reps < min_reps:
        raise SpecError(f"monte_carlo needs at least {min_reps} replications")
    world = world or gen_world(cfg)
    base = world.design()
    names = base.names
    truth = true_coefficients(cfg, names)
    est = np.empty((n_reps, len(names)))
    se_c = np.empty_like(est)
    se_h = np.empty_like(est)
    for rep in range(n_reps):
        draw = gen_conflict(world, rep=rep)
        if cfg.link == "linear":
            d = replace(base, y=draw.ravel())
            fit = estimator.hdfe_ols(d)
        else:
            y = draw.counts["count_one_sided"].ravel().astype(float)
            fit = estimator.hdfe_ppml(replace(base, y=y))
        cov = inference.conley_cov(fit, cutoff_km=cutoff_km, kernel=kernel)
        est[rep] = fit.beta
        se_c[rep] = cov.se
        se_h[rep] = inference.hc0(fit).se
    z = inference.Z95
    mean = est.mean(axis=0)
    sd = est.std(axis=0, ddof=1)
    table = pd.DataFrame(
        {
            "term": names,
            "truth": truth,
            "mean": mean,
            "bias": mean - truth,
            "rmse": np.sqrt(((est - truth) ** 2).mean(axis=0)),
            "mc_se": sd / math.sqrt(n_reps),
            "sd": sd,
            "mean_se_conley": se_c.mean(axis=0),
            "coverage_conley": (np.abs(est - truth) <= z * se_c).mean(axis=0),
            "coverage_hc0": (np.abs(est - truth) <= z * se_h).mean(axis=0),
            "n_reps": n_reps,
        }
    )
    return MonteCarloReport(table, n_reps, cutoff_km)


__all__ = [
    "SynthConfig",
    "World",
    "gen_world",
    "gen_conflict",
    "dense_oracle",
    "monte_carlo",
    "MonteCarloReport",
    "write_world",
    "events_from_counts",
]
