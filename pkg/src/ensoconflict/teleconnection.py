"""Cell-month ENSO teleconnections.

For each cell, calendar month and weather variable, the centred three-month
mean of the variable is regressed on the December ONI of the ENSO year it falls
in and a linear trend. A growing-season month is teleconnected when either
the precipitation or the temperature coefficient is significant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from ensoconflict.crop_calendar import CropCalendar, enso_year_of, growing_season
from ensoconflict.errors import InputError, SpecError
from ensoconflict.ingest import MonthWindow, OniSeries, WeatherPanel, cell_calendar_arrays

ALPHA = 0.05
MIN_YEARS = 10
PROFILE_COLUMNS = [
    "cell_id",
    "tc_intensity",
    "tc_intensity_precip",
    "tc_intensity_temp",
    "impact_class",
    "gs_dprecip",
    "gs_dtmax",
    "tc_months",
    "tc_months_precip",
    "tc_months_temp",
]
MONTH_LIST_COLUMNS = ("tc_months", "tc_months_precip", "tc_months_temp")


@dataclass(frozen=True)
class CellMonthFit:
    alpha: float
    beta: float
    gamma: float
    se_beta: float
    t_stat: float
    p_value: float
    n_years: int


@dataclass
class FitArrays:
    """Fits for many cells and months; every array is ``(n_cells, 12)``, month 1 in column 0."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    se_beta: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    n_years: np.ndarray

    def cell_month(self, i: int, month: int) -> CellMonthFit:
        k = month - 1
        return CellMonthFit(
            float(self.alpha[i, k]),
            float(self.beta[i, k]),
            float(self.gamma[i, k]),
            float(self.se_beta[i, k]),
            float(self.t_stat[i, k]),
            float(self.p_value[i, k]),
            int(self.n_years[i, k]),
        )


# --------------------------------------------------------------------------- moving average


def centered_ma3(values: np.ndarray) -> np.ndarray:
    """Mean of months ``t-1, t, t+1`` along the last axis; NaN where incomplete."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    out[..., 1:-1] = (values[..., :-2] + values[..., 1:-1] + values[..., 2:]) / 3.0
    return out


def ma3(values: np.ndarray, window: MonthWindow, month: int) -> tuple[np.ndarray, np.ndarray]:
    """Centred three-month mean at calendar ``month`` for every ENSO year in ``window``.

    ``values`` holds consecutive months of ``window`` along its last axis. Returns
    ``(enso_years, means)``; years whose three-month window runs off the data
    are dropped.
    """
    ma = centered_ma3(values)
    years, months = window.years_months()
    sel = np.flatnonzero(months == month)
    ok = ~np.isnan(ma[..., sel]).reshape(-1, len(sel)).any(axis=0)
    sel = sel[ok]
    return enso_year_of(years[sel], months[sel]), ma[..., sel]


# --------------------------------------------------------------------------- regressions


def _fit_many(y: np.ndarray, oni: np.ndarray, trend: np.ndarray, dist: str, se_type: str):
    """OLS of each column of ``y`` on ``[1, oni, trend]``."""
    n = len(oni)
    X = np.column_stack([np.ones(n), oni, trend])
    if np.linalg.matrix_rank(X) < 3:
        raise SpecError("teleconnection regression is rank deficient (constant ONI over the fit years?)")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    xtx_inv = np.linalg.inv(X.T @ X)
    df = n - 3
    if se_type == "classical":
        s2 = (resid**2).sum(axis=0) / df
        se = np.sqrt(s2 * xtx_inv[1, 1])
    elif se_type == "hc1":
        row = X @ xtx_inv[:, 1]
        se = np.sqrt((row[:, None] ** 2 * resid**2).sum(axis=0) * n / df)
    else:
        raise SpecError(f"unknown se_type {se_type!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef[1] / se, np.where(coef[1] == 0, 0.0, np.inf))
    if dist == "t":
        p = 2 * stats.t.sf(np.abs(t), df)
    elif dist == "normal":
        p = 2 * stats.norm.sf(np.abs(t))
    else:
        raise SpecError(f"unknown dist {dist!r}")
    return coef, se, t, p


def fit_cell_month(
    values: Sequence[float],
    oni: Mapping[int, float],
    years: Sequence[int],
    *,
    trend_origin: int | None = None,
    dist: str = "t",
    se_type: str = "classical",
    min_years: int = MIN_YEARS,
) -> CellMonthFit:
    """Regress one cell-month weather series on the December ONI and a trend.

    ``values[k]`` belongs to ENSO year ``years[k]``. The trend is counted in
    years from ``trend_origin`` (default: the first year).
    """
    years = np.asarray(years, dtype=int)
    y = np.asarray(values, dtype=float)
    if len(years) != len(y):
        raise InputError("values and years differ in length")
    if len(y) < min_years:
        raise InputError(f"need at least {min_years} complete years, got {len(y)}")
    origin = int(years[0]) if trend_origin is None else trend_origin
    x = np.array([oni[int(t)] for t in years])
    coef, se, t, p = _fit_many(y[:, None], x, (years - origin).astype(float), dist, se_type)
    return CellMonthFit(
        float(coef[0, 0]), float(coef[1, 0]), float(coef[2, 0]), float(se[0]), float(t[0]), float(p[0]), len(y)
    )


def fit_all(
    values: np.ndarray,
    window: MonthWindow,
    oni: OniSeries,
    *,
    dist: str = "t",
    se_type: str = "classical",
    min_years: int = MIN_YEARS,
) -> FitArrays:
    """Fit every cell and calendar month of an ``(n_cells, n_months)`` weather array."""
    n_cells = values.shape[0]
    out = {k: np.empty((n_cells, 12)) for k in ("alpha", "beta", "gamma", "se_beta", "t_stat", "p_value")}
    n_years = np.zeros((n_cells, 12), dtype=int)
    origin = int(enso_year_of(window.start_year, window.start_month))
    for month in range(1, 13):
        years, y = ma3(values, window, month)
        if len(years) < min_years:
            raise InputError(
                f"weather window {window} leaves {len(years)} complete years for month {month}; need {min_years}"
            )
        coef, se, t, p = _fit_many(y.T, oni.lookup(years), (years - origin).astype(float), dist, se_type)
        k = month - 1
        out["alpha"][:, k], out["beta"][:, k], out["gamma"][:, k] = coef
        out["se_beta"][:, k], out["t_stat"][:, k], out["p_value"][:, k] = se, t, p
        n_years[:, k] = len(years)
    return FitArrays(n_years=n_years, **out)


# --------------------------------------------------------------------------- growing-season summaries


@dataclass(frozen=True)
class IntensityFragment:
    tc_months: tuple[int, ...]
    tc_intensity: float
    tc_intensity_precip: float
    tc_intensity_temp: float


def intensity(
    cal: CropCalendar,
    precip_fits: Mapping[int, CellMonthFit],
    temp_fits: Mapping[int, CellMonthFit],
    alpha: float = ALPHA,
) -> IntensityFragment:
    """Share of growing-season months with a significant ONI coefficient."""
    gs = cal.gs_months
    sig_p = {m for m in gs if precip_fits[m].p_value < alpha}
    sig_t = {m for m in gs if temp_fits[m].p_value < alpha}
    tc = tuple(m for m in gs if m in sig_p or m in sig_t)
    n = len(gs)
    return IntensityFragment(tc, len(tc) / n, len(sig_p) / n, len(sig_t) / n)


def impact_class(precip_fits: Mapping[int, CellMonthFit], temp_fits: Mapping[int, CellMonthFit], cal: CropCalendar) -> str:
    """``NEG`` when El Nino dries and heats the growing season on average, else ``AMB``."""
    dp, dt = gs_weather_impact(precip_fits, temp_fits, cal)
    return "NEG" if dp < 0 and dt > 0 else "AMB"


def gs_weather_impact(
    precip_fits: Mapping[int, CellMonthFit], temp_fits: Mapping[int, CellMonthFit], cal: CropCalendar
) -> tuple[float, float]:
    gs = cal.gs_months
    return (
        float(np.mean([precip_fits[m].beta for m in gs])),
        float(np.mean([temp_fits[m].beta for m in gs])),
    )


def profiles(
    cells: pd.DataFrame,
    weather: WeatherPanel,
    oni: OniSeries,
    *,
    window: MonthWindow | None = None,
    alpha: float = ALPHA,
    dist: str = "t",
    se_type: str = "classical",
    min_years: int = MIN_YEARS,
) -> tuple[pd.DataFrame, FitArrays, FitArrays]:
    """Teleconnection profile of every cell, plus the underlying precip/tmax fits.

    Cells without cropland get zero intensities, ``impact_class == "none"`` and
    NaN weather impacts.
    """
    w = weather.reorder(cells["cell_id"].to_numpy())
    if window is not None:
        w = w.slice(window)
    fp = fit_all(w.precip, w.window, oni, dist=dist, se_type=se_type, min_years=min_years)
    ft = fit_all(w.tmax, w.window, oni, dist=dist, se_type=se_type, min_years=min_years)

    has, pm, hm = cell_calendar_arrays(cells)
    months = np.arange(1, 13)
    gs = has[:, None] & (((months[None, :] - pm[:, None]) % 12) <= ((hm - pm) % 12)[:, None])
    n_gs = np.maximum(gs.sum(axis=1), 1)
    sig_p = fp.p_value < alpha
    sig_t = ft.p_value < alpha
    with np.errstate(invalid="ignore"):
        dprecip = np.where(has, (fp.beta * gs).sum(axis=1) / n_gs, np.nan)
        dtmax = np.where(has, (ft.beta * gs).sum(axis=1) / n_gs, np.nan)
    cls = np.where(~has, "none", np.where((dprecip < 0) & (dtmax > 0), "NEG", "AMB"))

    tc_mask = gs & (sig_p | sig_t)
    month_lists = {k: [] for k in MONTH_LIST_COLUMNS}
    for i in range(len(cells)):
        order = growing_season(int(pm[i]), int(hm[i])).gs_months if has[i] else ()
        for key, mask in zip(MONTH_LIST_COLUMNS, (tc_mask, gs & sig_p, gs & sig_t)):
            month_lists[key].append(tuple(m for m in order if mask[i, m - 1]))

    prof = pd.DataFrame(
        {
            "cell_id": cells["cell_id"].to_numpy(),
            "tc_intensity": tc_mask.sum(axis=1) / n_gs,
            "tc_intensity_precip": (gs & sig_p).sum(axis=1) / n_gs,
            "tc_intensity_temp": (gs & sig_t).sum(axis=1) / n_gs,
            "impact_class": cls,
            "gs_dprecip": dprecip,
            "gs_dtmax": dtmax,
            **month_lists,
        }
    )
    return prof, fp, ft


def fit_dump(cells: pd.DataFrame, fp: FitArrays, ft: FitArrays) -> pd.DataFrame:
    """Long audit table of every cell-month-variable fit."""
    frames = []
    for var, f in (("precip", fp), ("tmax", ft)):
        n = len(cells)
        frames.append(
            pd.DataFrame(
                {
                    "cell_id": np.repeat(cells["cell_id"].to_numpy(), 12),
                    "month": np.tile(np.arange(1, 13), n),
                    "variable": var,
                    "alpha": f.alpha.ravel(),
                    "beta": f.beta.ravel(),
                    "gamma": f.gamma.ravel(),
                    "se_beta": f.se_beta.ravel(),
                    "t_stat": f.t_stat.ravel(),
                    "p_value": f.p_value.ravel(),
                    "n_years": f.n_years.ravel(),
                }
            )
        )
    return pd.concat(frames, ignore_index=True).sort_values(["cell_id", "variable", "month"], kind="stable")


def _months_str(months: Iterable[int]) -> str:
    return ";".join(str(m) for m in months)


def profiles_to_csv_frame(prof: pd.DataFrame) -> pd.DataFrame:
    out = prof[PROFILE_COLUMNS].copy()
    for col in MONTH_LIST_COLUMNS:
        out[col] = [_months_str(m) for m in prof[col]]
    return out


def read_profiles(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={c: str for c in ("impact_class",) + MONTH_LIST_COLUMNS}, keep_default_na=False)
    missing = [c for c in PROFILE_COLUMNS if c not in MONTH_LIST_COLUMNS and c not in df.columns]
    if missing:
        raise InputError(f"missing column {missing[0]!r}", row=1, path=str(path))
    for col in ("gs_dprecip", "gs_dtmax"):
        df[col] = pd.to_numeric(df[col], errors="coerce")
    for col in MONTH_LIST_COLUMNS:
        if col in df:
            df[col] = [tuple(int(x) for x in s.split(";") if x) for s in df[col].astype(str)]
        else:
            df[col] = [()] * len(df)
    return df
