"""Estimation-ready designs for the conflict and yield regressions.

Rows are ordered by cell (ascending ``cell_id``) then calendar month. The
exposure of a cropland cell is ``AREA x TC`` (cropland in 10,000 ha times the
growing-season teleconnection intensity, or their indicator versions); the
main regressor multiplies it by the December ONI assigned to the growing
season that ended at the relevant harvest.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from ensoconflict.crop_calendar import EVENT_OFFSETS, enso_year_of, gs_enso_lag, growing_season
from ensoconflict.errors import InputError, SpecError
from ensoconflict.ingest import ConflictPanel, MonthWindow, OniSeries, WeatherPanel, cell_calendar_arrays

AREA_UNIT_HA = 10_000.0
EQUATIONS = ("eq1", "eq2", "eq3", "eq4", "b16")
OUTCOMES = ("count", "incidence", "agrarian")
FE_SCHEMES = ("cell+cym", "cell+ym", "cell+cy")
TC_VARIABLES = ("both", "precip", "temp")


@dataclass(frozen=True)
class DesignSpec:
    """Which regression to build.

    ``area_threshold_ha`` / ``tc_threshold`` switch the exposure factors to
    indicators (strictly greater than the threshold); ``None`` keeps them
    continuous.
    """

    equation: str = "eq2"
    outcome: str = "count"
    kind: str = "one_sided"
    area_threshold_ha: float | None = None
    tc_threshold: float | None = None
    tc_variable: str = "both"
    fe_scheme: str = "cell+cym"
    weather_controls: bool = True
    enso_lag: int = 0

    def __post_init__(self):
        checks = [
            (self.equation, EQUATIONS, "equation"),
            (self.outcome, OUTCOMES, "outcome"),
            (self.kind, ("one_sided", "two_sided"), "kind"),
            (self.tc_variable, TC_VARIABLES, "tc_variable"),
            (self.fe_scheme, FE_SCHEMES, "fe_scheme"),
            (self.enso_lag, (0, 1), "enso_lag"),
        ]
        for value, allowed, name in checks:
            if value not in allowed:
                raise SpecError(f"{name} must be one of {allowed}, got {value!r}")

    @classmethod
    def for_equation(cls, equation: str, **kw) -> "DesignSpec":
        # the post-planting falsification uses the year-lagged growing-season ENSO
        if equation == "b16":
            kw.setdefault("enso_lag", 1)
        return cls(equation=equation, **kw)

    @property
    def interaction_names(self) -> list[str]:
        return {
            "eq1": ["main"],
            "eq2": ["main", "postharvest"],
            "b16": ["main", "postplanting"],
            "eq3": ["main_neg", "postharvest_neg", "main_amb", "postharvest_amb"],
            "eq4": [f"j={j}" for j in EVENT_OFFSETS],
        }[self.equation]

    @property
    def effect_terms(self) -> list[list[str]]:
        """Coefficient groups whose sums give the headline percent effects."""
        return {
            "eq1": [["main"]],
            "eq2": [["main", "postharvest"]],
            "b16": [["main", "postplanting"]],
            "eq3": [["main_neg", "postharvest_neg"], ["main_amb", "postharvest_amb"]],
            "eq4": [[f"j={j}"] for j in EVENT_OFFSETS],
        }[self.equation]


@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    names: list[str]
    fe: list[np.ndarray]
    fe_names: list[str]
    coords: np.ndarray | None = None
    period: np.ndarray | None = None
    cell_id: np.ndarray | None = None
    year: np.ndarray | None = None
    month: np.ndarray | None = None
    trend: np.ndarray | None = None
    cluster: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        if len(set(self.names)) != len(self.names):
            raise SpecError(f"regressor names must be unique: {self.names}")
        if self.X.shape[1] != len(self.names):
            raise SpecError("X has a different number of columns than names")
        if not np.isfinite(self.y).all() or not np.isfinite(self.X).all():
            raise InputError("design contains missing or non-finite values")

    @property
    def n(self) -> int:
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def subset(self, rows: np.ndarray) -> "DesignMatrix":
        take = lambda a: None if a is None else a[rows]  # noqa: E731
        return replace(
            self,
            y=self.y[rows],
            X=self.X[rows],
            fe=[f[rows] for f in self.fe],
            coords=take(self.coords),
            period=take(self.period),
            cell_id=take(self.cell_id),
            year=take(self.year),
            month=take(self.month),
            trend=take(self.trend),
            cluster=take(self.cluster),
        )

    def preview(self, n_rows: int | None = None) -> pd.DataFrame:
        sl = slice(None) if n_rows is None else slice(0, n_rows)
        df = pd.DataFrame()
        for name in ("cell_id", "year", "month"):
            a = getattr(self, name)
            if a is not None:
                df[name] = a[sl]
        df["y"] = self.y[sl]
        for k, name in enumerate(self.names):
            df[name] = self.X[sl, k]
        for name, codes in zip(self.fe_names, self.fe):
            df[f"fe_{name}"] = codes[sl]
        return df


# --------------------------------------------------------------------------- exposure


def _tc_column(tc_variable: str) -> str:
    return {"both": "tc_intensity", "precip": "tc_intensity_precip", "temp": "tc_intensity_temp"}[tc_variable]


def _tc_months_column(tc_variable: str) -> str:
    return {"both": "tc_months", "precip": "tc_months_precip", "temp": "tc_months_temp"}[tc_variable]


def _aligned_profiles(cells: pd.DataFrame, profiles: pd.DataFrame) -> pd.DataFrame:
    prof = profiles.set_index("cell_id")
    missing = np.setdiff1d(cells["cell_id"].to_numpy(), prof.index.to_numpy())
    if len(missing):
        raise InputError(f"no teleconnection profile for cell_id {missing[0]}")
    return prof.loc[cells["cell_id"].to_numpy()].reset_index()


def exposure_factors(cells: pd.DataFrame, profiles: pd.DataFrame, spec: DesignSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell AREA and TC factors in the form requested by ``spec``."""
    prof = _aligned_profiles(cells, profiles)
    ha = cells["cropland_ha"].to_numpy(dtype=float)
    tc = prof[_tc_column(spec.tc_variable)].to_numpy(dtype=float)
    area = ha / AREA_UNIT_HA if spec.area_threshold_ha is None else (ha > spec.area_threshold_ha).astype(float)
    tcf = tc if spec.tc_threshold is None else (tc > spec.tc_threshold).astype(float)
    has = ha > 0
    return np.where(has, area, 0.0), np.where(has, tcf, 0.0)


def _sorted_cells(cells: pd.DataFrame) -> pd.DataFrame:
    return cells.sort_values("cell_id", kind="stable").reset_index(drop=True)


def _gs_shifts(cells: pd.DataFrame, prof: pd.DataFrame, spec: DesignSpec) -> np.ndarray:
    has, pm, hm = cell_calendar_arrays(cells)
    col = _tc_months_column(spec.tc_variable)
    shifts = np.zeros(len(cells), dtype=int)
    cache: dict = {}
    for i in np.flatnonzero(has):
        key = (pm[i], hm[i], tuple(prof[col].iat[i]))
        if key not in cache:
            cache[key] = gs_enso_lag(growing_season(int(pm[i]), int(hm[i])), key[2])
        shifts[i] = cache[key]
    return shifts


def gs_enso_matrix(
    cells: pd.DataFrame,
    profiles: pd.DataFrame,
    window: MonthWindow,
    oni: OniSeries,
    spec: DesignSpec,
) -> np.ndarray:
    """``(n_cells, n_months)`` growing-season December ONI; 0 for cells without cropland.

    Each month is tied to a harvest: the one that opened its crop year, or for
    the event-study design the harvest at event time 0 (so the four lean-season
    months before a harvest carry that harvest's growing-season ENSO).
    """
    cells = _sorted_cells(cells)
    prof = _aligned_profiles(cells, profiles)
    has, pm, hm = cell_calendar_arrays(cells)
    idx = window.indices()[None, :]
    month = idx % 12 + 1
    d = (month - hm[:, None]) % 12
    back = np.where(d <= 7, d, d - 12) if spec.equation == "eq4" else d
    harvest_idx = idx - back
    enso_year = enso_year_of(harvest_idx // 12, np.broadcast_to(hm[:, None], harvest_idx.shape))
    enso_year = enso_year - _gs_shifts(cells, prof, spec)[:, None] - spec.enso_lag
    out = np.zeros(enso_year.shape)
    out[has] = oni.lookup(enso_year[has])
    return out


# --------------------------------------------------------------------------- designs


def _fe_codes(spec: DesignSpec, cells: pd.DataFrame, window: MonthWindow) -> tuple[list[np.ndarray], list[str]]:
    n, t = len(cells), window.n_months
    cell_code = np.repeat(np.arange(n, dtype=np.int64), t)
    country = pd.factorize(cells["country"], sort=True)[0].astype(np.int64)
    tt = np.tile(np.arange(t, dtype=np.int64), n)
    if spec.fe_scheme == "cell+cym":
        second, name = np.repeat(country, t) * t + tt, "country_yearmonth"
    elif spec.fe_scheme == "cell+ym":
        second, name = tt, "yearmonth"
    else:
        years = window.years_months()[0]
        ycode = np.tile(years - years.min(), n).astype(np.int64)
        second, name = np.repeat(country, t) * (years.max() - years.min() + 1) + ycode, "country_year"
    second = np.unique(second, return_inverse=True)[1].astype(np.int32)
    return [cell_code.astype(np.int32), second], ["cell", name]


def outcome_matrix(conflict: ConflictPanel, spec: DesignSpec) -> np.ndarray:
    counts = conflict.outcome(spec.kind, agrarian=spec.outcome == "agrarian")
    if spec.outcome == "incidence":
        return np.minimum(counts, 1)
    return counts


def build_design(
    spec: DesignSpec,
    cells: pd.DataFrame,
    profiles: pd.DataFrame,
    conflict: ConflictPanel | None,
    weather: WeatherPanel | None,
    oni: OniSeries,
    *,
    window: MonthWindow | None = None,
    outcome: np.ndarray | None = None,
) -> DesignMatrix:
    """Assemble ``y``, the named interaction regressors, weather controls and FE codes.

    ``outcome`` (``(n_cells, n_months)``, rows in ascending ``cell_id``) replaces the
    conflict counts when given, e.g. for real-valued synthetic outcomes.
    """
    cells = _sorted_cells(cells)
    ids = cells["cell_id"].to_numpy()
    if window is None:
        if conflict is None:
            raise SpecError("window is required without a conflict panel")
        window = conflict.window
    n, t = len(cells), window.n_months

    if outcome is None:
        if conflict is None:
            raise SpecError("need a conflict panel or an explicit outcome")
        if conflict.window != window:
            raise InputError(f"conflict panel covers {conflict.window}, design window is {window}")
        y = outcome_matrix(conflict.reorder(ids), spec).astype(float)
    else:
        y = np.asarray(outcome, dtype=float)
        if y.shape != (n, t):
            raise InputError(f"outcome has shape {y.shape}, expected {(n, t)}")

    prof = _aligned_profiles(cells, profiles)
    area, tc = exposure_factors(cells, prof, spec)
    exposure = area * tc
    enso = gs_enso_matrix(cells, prof, window, oni, spec)
    main = exposure[:, None] * enso

    has, pm, hm = cell_calendar_arrays(cells)
    month = (window.indices() % 12 + 1)[None, :]
    cols: dict[str, np.ndarray] = {}
    if spec.equation == "eq1":
        cols["main"] = main
    elif spec.equation == "eq2":
        post = ((month - hm[:, None]) % 12 < 3) & has[:, None]
        cols["main"] = main
        cols["postharvest"] = main * post
    elif spec.equation == "b16":
        post = ((month - pm[:, None]) % 12 < 3) & has[:, None]
        cols["main"] = main
        cols["postplanting"] = main * post
    elif spec.equation == "eq3":
        if "impact_class" not in prof:
            raise SpecError("eq3 needs impact_class in the teleconnection profiles")
        klass = prof["impact_class"].to_numpy().astype(str)
        if not np.isin(klass[has], ["NEG", "AMB"]).all():
            raise SpecError("eq3 needs impact_class NEG or AMB for every cropland cell")
        post = ((month - hm[:, None]) % 12 < 3) & has[:, None]
        for tag in ("neg", "amb"):
            sel = (klass == tag.upper())[:, None]
            cols[f"main_{tag}"] = main * sel
            cols[f"postharvest_{tag}"] = main * post * sel
    else:
        d = (month - hm[:, None]) % 12
        j = np.where(d <= 7, d, d - 12)
        for off in EVENT_OFFSETS:
            cols[f"j={off}"] = main * (j == off)

    if spec.weather_controls:
        if weather is None:
            raise SpecError("weather controls requested but no weather panel given")
        w = weather.reorder(ids).slice(window)
        cols["rainfall"] = w.precip
        cols["heat"] = w.tmax

    names = list(cols)
    X = np.empty((n * t, len(names)))
    for k, name in enumerate(names):
        X[:, k] = cols[name].ravel()
    fe, fe_names = _fe_codes(spec, cells, window)
    years, months = window.years_months()
    lat = cells["lat"].to_numpy(dtype=float)
    lon = cells["lon"].to_numpy(dtype=float)
    return DesignMatrix(
        y=y.ravel(),
        X=X,
        names=names,
        fe=fe,
        fe_names=fe_names,
        coords=np.column_stack([np.repeat(lat, t), np.repeat(lon, t)]),
        period=np.tile(np.arange(t, dtype=np.int32), n),
        cell_id=np.repeat(ids, t),
        year=np.tile(years, n),
        month=np.tile(months, n),
        meta={"spec": spec.__dict__.copy(), "window": str(window), "n_cells": n},
    )


# --------------------------------------------------------------------------- summaries


@dataclass(frozen=True)
class CroplandSummary:
    mean_tc: float
    mean_area: float
    mean_conflict: float
    n_cells: int
    cell_filter: str


def qualifying_cells(cells: pd.DataFrame, profiles: pd.DataFrame, spec: DesignSpec, subset: str = "all") -> np.ndarray:
    """Boolean mask of the "teleconnected croplands" behind the effect formulas.

    A cell qualifies when both exposure factors (in the form ``spec`` uses) are
    positive; ``subset`` further restricts to ``NEG`` or ``AMB`` cells.
    """
    cells = _sorted_cells(cells)
    prof = _aligned_profiles(cells, profiles)
    area, tc = exposure_factors(cells, prof, spec)
    mask = (area > 0) & (tc > 0)
    if subset in ("NEG", "AMB"):
        mask &= prof["impact_class"].to_numpy().astype(str) == subset
    elif subset != "all":
        raise SpecError(f"subset must be all, NEG or AMB, got {subset!r}")
    return mask


def cropland_summary(
    cells: pd.DataFrame,
    profiles: pd.DataFrame,
    conflict: ConflictPanel | None,
    spec: DesignSpec,
    subset: str = "all",
    *,
    outcome: np.ndarray | None = None,
) -> CroplandSummary:
    """Means of TC, AREA (10,000 ha) and the outcome over qualifying cells."""
    cells = _sorted_cells(cells)
    prof = _aligned_profiles(cells, profiles)
    mask = qualifying_cells(cells, prof, spec, subset)
    if not mask.any():
        raise SpecError(f"no qualifying cells for subset {subset!r}")
    if outcome is None:
        outcome = outcome_matrix(conflict.reorder(cells["cell_id"].to_numpy()), spec)
    tc = prof[_tc_column(spec.tc_variable)].to_numpy(dtype=float)
    area = cells["cropland_ha"].to_numpy(dtype=float) / AREA_UNIT_HA
    desc = f"area>{spec.area_threshold_ha or 0:g}ha & tc>{spec.tc_threshold or 0:g} ({spec.tc_variable})"
    if subset != "all":
        desc += f" & {subset}"
    return CroplandSummary(
        mean_tc=float(tc[mask].mean()),
        mean_area=float(area[mask].mean()),
        mean_conflict=float(np.asarray(outcome, dtype=float)[mask].mean()),
        n_cells=int(mask.sum()),
        cell_filter=desc,
    )


# --------------------------------------------------------------------------- yields


YIELD_TERMS = ["weak_tc_x_enso", "tc_x_enso"]


def build_yield_design(yields: pd.DataFrame, country_tc, country_oni) -> DesignMatrix:
    """Country-year design for log yields on ``(1-TC)xENSO`` and ``TCxENSO``.

    ``country_tc`` maps country -> TC; ``country_oni`` is a frame with
    ``country, year, enso`` (or a mapping year -> ONI shared by all countries).
    """
    df = yields.sort_values(["country", "year"], kind="stable").reset_index(drop=True)
    bad = df["yield_t_per_ha"].to_numpy(dtype=float) <= 0
    if bad.any():
        r = df.iloc[int(np.flatnonzero(bad)[0])]
        raise InputError(f"non-positive yield {r['yield_t_per_ha']} for {r['country']} {r['year']}")
    years_by_country = df.groupby("country")["year"].apply(lambda s: tuple(sorted(s)))
    if years_by_country.nunique() != 1:
        raise InputError("yield table is not a balanced country x year panel")
    tc = pd.Series(dict(country_tc)).reindex(df["country"]).to_numpy(dtype=float)
    if np.isnan(tc).any():
        raise InputError(f"no TC for country {df['country'][np.isnan(tc)].iloc[0]}")
    if isinstance(country_oni, pd.DataFrame):
        enso = (
            country_oni.set_index(["country", "year"])["enso"]
            .reindex(pd.MultiIndex.from_frame(df[["country", "year"]]))
            .to_numpy(dtype=float)
        )
    else:
        enso = np.array([country_oni[int(y)] for y in df["year"]], dtype=float)
    if np.isnan(enso).any():
        raise InputError("missing ENSO value for some country-year")
    codes = pd.factorize(df["country"], sort=True)[0].astype(np.int32)
    return DesignMatrix(
        y=np.log(df["yield_t_per_ha"].to_numpy(dtype=float)),
        X=np.column_stack([(1 - tc) * enso, tc * enso]),
        names=list(YIELD_TERMS),
        fe=[codes],
        fe_names=["country"],
        year=df["year"].to_numpy(),
        trend=(df["year"] - df["year"].min()).to_numpy(dtype=float),
        cluster=codes,
        meta={"countries": sorted(df["country"].unique())},
    )


def country_aggregates(
    cells: pd.DataFrame, profiles: pd.DataFrame, oni: OniSeries, years
) -> tuple[dict[str, float], pd.DataFrame]:
    """Country TC and growing-season ENSO for the yield regression.

    Each country keeps the cells of its major crop (largest total cropland).
    TC is the cropland-weighted mean intensity of those cells; the ENSO value
    for crop year ``t`` is the December ONI of the ENSO year covering the
    larger cropland share of those cells' seasons harvested in ``t`` (the
    later year wins ties).
    """
    cells = _sorted_cells(cells)
    prof = _aligned_profiles(cells, profiles)
    spec = DesignSpec()
    shifts = _gs_shifts(cells, prof, spec)
    has, _, hm = cell_calendar_arrays(cells)
    df = cells.assign(tc=prof["tc_intensity"].to_numpy(), shift=shifts)[has]
    tc_out: dict[str, float] = {}
    rows = []
    for country, g in df.groupby("country", sort=True):
        crop = g.groupby("main_crop")["cropland_ha"].sum().sort_index().idxmax()
        g = g[g["main_crop"] == crop]
        w = g["cropland_ha"].to_numpy(dtype=float)
        tc_out[country] = float(np.average(g["tc"], weights=w))
        hmonth = g["harvest_month"].to_numpy(dtype=int)
        for t in years:
            ey = enso_year_of(np.full(len(g), int(t)), hmonth) - g["shift"].to_numpy()
            share = pd.Series(w).groupby(ey).sum()
            best = share[share == share.max()].index.max()
            rows.append({"country": country, "year": int(t), "enso": oni[int(best)]})
    return tc_out, pd.DataFrame(rows)


# --------------------------------------------------------------------------- columnar cache

CACHE_MAGIC = b"ENSOPNL\x00"
CACHE_VERSION = 1


def write_cache(design: DesignMatrix, path) -> None:
    """Columnar binary cache: magic, version, JSON column directory, raw little-endian data."""
    blocks: list[tuple[str, np.ndarray]] = [("y", design.y.astype("<f8"))]
    blocks += [(f"x:{name}", design.X[:, k].astype("<f8")) for k, name in enumerate(design.names)]
    blocks += [(f"fe:{name}", codes.astype("<i4")) for name, codes in zip(design.fe_names, design.fe)]
    for name in ("period", "cell_id", "year", "month", "cluster"):
        a = getattr(design, name)
        if a is not None:
            blocks.append((name, np.asarray(a).astype("<i4")))
    if design.trend is not None:
        blocks.append(("trend", design.trend.astype("<f8")))
    if design.coords is not None:
        blocks += [("lat", design.coords[:, 0].astype("<f8")), ("lon", design.coords[:, 1].astype("<f8"))]
    directory, offset = [], 0
    for name, a in blocks:
        directory.append({"name": name, "dtype": a.dtype.str, "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
    header = json.dumps(
        {"n_rows": design.n, "columns": directory, "meta": design.meta}, sort_keys=True, default=str
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, len(header)))
        fh.write(header)
        for _, a in blocks:
            fh.write(a.tobytes())


def read_cache(path) -> DesignMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != CACHE_MAGIC:
        raise InputError("not a panel cache file", path=str(path))
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CACHE_VERSION:
        raise InputError(f"unsupported panel cache version {version}", path=str(path))
    header = json.loads(raw[16 : 16 + hlen])
    base = 16 + hlen
    cols = {}
    for c in header["columns"]:
        start = base + c["offset"]
        cols[c["name"]] = np.frombuffer(raw[start : start + c["nbytes"]], dtype=c["dtype"]).copy()
    names = [c["name"][2:] for c in header["columns"] if c["name"].startswith("x:")]
    fe_names = [c["name"][3:] for c in header["columns"] if c["name"].startswith("fe:")]
    n = header["n_rows"]
    coords = np.column_stack([cols["lat"], cols["lon"]]) if "lat" in cols else None
    return DesignMatrix(
        y=cols["y"],
        X=np.column_stack([cols[f"x:{k}"] for k in names]) if names else np.empty((n, 0)),
        names=names,
        fe=[cols[f"fe:{k}"] for k in fe_names],
        fe_names=fe_names,
        coords=coords,
        period=cols.get("period"),
        cell_id=cols.get("cell_id"),
        year=cols.get("year"),
        month=cols.get("month"),
        trend=cols.get("trend"),
        cluster=cols.get("cluster"),
        meta=header.get("meta", {}),
    )
