"""Input schemas, gridding of point events and monthly conflict counts.

Five flat CSV files feed the pipeline::

    cells.csv    cell_id,lat,lon,country,cropland_ha,main_crop,plant_month,harvest_month
    weather.csv  cell_id,year,month,precip_mm_day,tmax_c
    oni.csv      enso_year,dec_oni
    events.csv   event_id,date,lat,lon,kind,notes
    yields.csv   country,year,yield_t_per_ha

Every reader validates on load and raises :class:`~ensoconflict.errors.InputError`
carrying the offending CSV line number.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple

import numpy as np
import pandas as pd

from ensoconflict.crop_calendar import MAX_GS_LENGTH, MIN_GS_LENGTH
from ensoconflict.errors import InputError, MissingOniError

logger = logging.getLogger(__name__)

GRID_DEG = 0.5
CROPS = ("maize", "sorghum", "millet", "rice", "wheat", "none")
KINDS = ("one_sided", "two_sided")

CELL_COLUMNS = ["cell_id", "lat", "lon", "country", "cropland_ha", "main_crop", "plant_month", "harvest_month"]
WEATHER_COLUMNS = ["cell_id", "year", "month", "precip_mm_day", "tmax_c"]
ONI_COLUMNS = ["enso_year", "dec_oni"]
EVENT_COLUMNS = ["event_id", "date", "lat", "lon", "kind", "notes"]
YIELD_COLUMNS = ["country", "year", "yield_t_per_ha"]
COUNT_COLUMNS = ["count_one_sided", "count_two_sided", "count_one_sided_agrarian", "count_two_sided_agrarian"]


# --------------------------------------------------------------------------- windows


@dataclass(frozen=True)
class MonthWindow:
    """Inclusive range of calendar months."""

    start_year: int
    start_month: int
    end_year: int
    end_month: int

    def __post_init__(self):
        if not (1 <= self.start_month <= 12 and 1 <= self.end_month <= 12):
            raise InputError(f"invalid month in window {self}")
        if self.end_index < self.start_index:
            raise InputError(f"empty window {self}")

    @classmethod
    def parse(cls, text: str) -> "MonthWindow":
        """Parse ``YYYY-MM:YYYY-MM``."""
        m = re.fullmatch(r"\s*(\d{4})-(\d{1,2})\s*:\s*(\d{4})-(\d{1,2})\s*", text)
        if not m:
            raise InputError(f"window must look like 1997-06:2024-05, got {text!r}")
        return cls(*(int(g) for g in m.groups()))

    @classmethod
    def from_indices(cls, start: int, end: int) -> "MonthWindow":
        return cls(start // 12, start % 12 + 1, end // 12, end % 12 + 1)

    @property
    def start_index(self) -> int:
        return self.start_year * 12 + self.start_month - 1

    @property
    def end_index(self) -> int:
        return self.end_year * 12 + self.end_month - 1

    @property
    def n_months(self) -> int:
        return self.end_index - self.start_index + 1

    def indices(self) -> np.ndarray:
        return np.arange(self.start_index, self.end_index + 1)

    def years_months(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices()
        return idx // 12, idx % 12 + 1

    def contains(self, year, month):
        idx = np.asarray(year) * 12 + np.asarray(month) - 1
        return (idx >= self.start_index) & (idx <= self.end_index)

    def __str__(self) -> str:
        return f"{self.start_year:04d}-{self.start_month:02d}:{self.end_year:04d}-{self.end_month:02d}"


# --------------------------------------------------------------------------- gridding


class GridCell(NamedTuple):
    corner_lat: float
    corner_lon: float
    center_lat: float
    center_lon: float


def _check_coord(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    bad_lat = ~((lat >= -90) & (lat <= 90))
    bad_lon = ~((lon >= -180) & (lon <= 180))
    if bad_lat.any():
        raise ValueError(f"latitude out of range: {lat[bad_lat].ravel()[0]!r}")
    if bad_lon.any():
        raise ValueError(f"longitude out of range: {lon[bad_lon].ravel()[0]!r}")
    return lat, lon


def grid_corners(lat, lon) -> tuple[np.ndarray, np.ndarray]:
    """Lower-left corners of the half-open 0.5 degree cells holding each point."""
    lat, lon = _check_coord(lat, lon)
    a = np.floor(lat / GRID_DEG) * GRID_DEG
    b = np.floor(lon / GRID_DEG) * GRID_DEG
    # the poles and the antimeridian close the top/right edge
    a = np.minimum(a, 90 - GRID_DEG)
    b = np.minimum(b, 180 - GRID_DEG)
    return a, b


def grid_event(lat: float, lon: float) -> GridCell:
    a, b = grid_corners(lat, lon)
    a, b = float(a), float(b)
    return GridCell(a, b, a + GRID_DEG / 2, b + GRID_DEG / 2)


def _grid_key(center_lat, center_lon) -> np.ndarray:
    # integer row/column of a cell center; centers sit mid-cell, so floor is exact
    i = np.floor((np.asarray(center_lat, dtype=float) + 90) / GRID_DEG).astype(np.int64)
    j = np.floor((np.asarray(center_lon, dtype=float) + 180) / GRID_DEG).astype(np.int64)
    return i * 1000 + j


# --------------------------------------------------------------------------- keywords


@lru_cache(maxsize=None)
def agrarian_keywords() -> tuple[str, tuple[str, ...]]:
    """``(version, keywords)`` from the packaged keyword list."""
    text = resources.files("ensoconflict").joinpath("data/agrarian_keywords.txt").read_text("utf-8")
    version = "unversioned"
    words = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            m = re.match(r"#\s*version:\s*(\S+)", line)
            if m:
                version = m.group(1)
            continue
        if line:
            words.append(line.lower())
    return version, tuple(words)


@lru_cache(maxsize=None)
def _agrarian_pattern() -> re.Pattern:
    _, words = agrarian_keywords()
    alternation = "|".join(sorted((re.escape(w) for w in words), key=len, reverse=True))
    return re.compile(rf"\b(?:{alternation})\b")


def is_agrarian(notes: str | None) -> bool:
    if not notes or not isinstance(notes, str):
        return False
    return _agrarian_pattern().search(notes.lower()) is not None


def agrarian_mask(notes: pd.Series) -> np.ndarray:
    text = notes.fillna("").astype(str).str.lower()
    return text.str.contains(_agrarian_pattern(), regex=True).to_numpy(dtype=bool)


# --------------------------------------------------------------------------- ONI


class OniSeries(Mapping[int, float]):
    """December ONI by ENSO year, contiguous."""

    def __init__(self, values: Mapping[int, float]):
        years = sorted(int(y) for y in values)
        if not years:
            raise InputError("empty ONI series")
        missing = sorted(set(range(years[0], years[-1] + 1)) - set(years))
        if missing:
            raise InputError(f"ONI series has a gap: missing ENSO year {missing[0]}")
        self.first_year = years[0]
        self.array = np.array([float(values[y]) for y in years])

    @property
    def last_year(self) -> int:
        return self.first_year + len(self.array) - 1

    def __getitem__(self, year: int) -> float:
        k = int(year) - self.first_year
        if not 0 <= k < len(self.array):
            raise MissingOniError(int(year))
        return float(self.array[k])

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.first_year, self.last_year + 1))

    def __len__(self) -> int:
        return len(self.array)

    def lookup(self, years: np.ndarray) -> np.ndarray:
        years = np.asarray(years)
        k = years - self.first_year
        bad = (k < 0) | (k >= len(self.array))
        if bad.any():
            raise MissingOniError(int(years[bad].ravel()[0]))
        return self.array[k]

    def require(self, first: int, last: int) -> None:
        for y in (first, last):
            if y not in self:
                raise MissingOniError(y)

    def __contains__(self, year) -> bool:
        return self.first_year <= int(year) <= self.last_year

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"enso_year": list(self), "dec_oni": self.array})


# --------------------------------------------------------------------------- panels


@dataclass
class WeatherPanel:
    """Dense cell x month weather; rows follow ``cell_ids`` order."""

    cell_ids: np.ndarray
    window: MonthWindow
    precip: np.ndarray
    tmax: np.ndarray

    def slice(self, window: MonthWindow) -> "WeatherPanel":
        lo = window.start_index - self.window.start_index
        hi = window.end_index - self.window.start_index + 1
        if lo < 0 or hi > self.window.n_months:
            raise InputError(f"weather covers {self.window}, which does not include {window}")
        return WeatherPanel(self.cell_ids, window, self.precip[:, lo:hi], self.tmax[:, lo:hi])

    def reorder(self, cell_ids: np.ndarray) -> "WeatherPanel":
        pos = _positions(self.cell_ids, cell_ids, "weather")
        return WeatherPanel(np.asarray(cell_ids), self.window, self.precip[pos], self.tmax[pos])

    def to_frame(self) -> pd.DataFrame:
        years, months = self.window.years_months()
        n, t = self.precip.shape
        return pd.DataFrame(
            {
                "cell_id": np.repeat(self.cell_ids, t),
                "year": np.tile(years, n),
                "month": np.tile(months, n),
                "precip_mm_day": self.precip.ravel(),
                "tmax_c": self.tmax.ravel(),
            }
        )


@dataclass
class ConflictPanel:
    """Balanced, zero-filled cell x month event counts."""

    cell_ids: np.ndarray
    window: MonthWindow
    counts: dict[str, np.ndarray]

    @property
    def n_rows(self) -> int:
        return len(self.cell_ids) * self.window.n_months

    def outcome(self, kind: str, agrarian: bool = False) -> np.ndarray:
        col = f"count_{kind}" + ("_agrarian" if agrarian else "")
        return self.counts[col]

    def reorder(self, cell_ids: np.ndarray) -> "ConflictPanel":
        pos = _positions(self.cell_ids, cell_ids, "conflict panel")
        return ConflictPanel(np.asarray(cell_ids), self.window, {k: v[pos] for k, v in self.counts.items()})

    def to_frame(self) -> pd.DataFrame:
        years, months = self.window.years_months()
        n, t = len(self.cell_ids), self.window.n_months
        frame = {
            "cell_id": np.repeat(self.cell_ids, t),
            "year": np.tile(years, n),
            "month": np.tile(months, n),
        }
        for col in COUNT_COLUMNS:
            frame[col] = self.counts[col].ravel()
        return pd.DataFrame(frame)


def _positions(have: np.ndarray, want: np.ndarray, what: str) -> np.ndarray:
    lookup = pd.Index(have)
    pos = lookup.get_indexer(want)
    if (pos < 0).any():
        raise InputError(f"{what} has no data for cell_id {np.asarray(want)[pos < 0][0]}")
    return pos


# --------------------------------------------------------------------------- CSV readers


def _read_csv(path, columns: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError("file not found", path=str(path))
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise InputError(f"missing column {missing[0]!r}", row=1, path=str(path))
    return df[columns]


def _numeric(df: pd.DataFrame, col: str, path, integer: bool = False, allow_blank: bool = False) -> pd.Series:
    raw = df[col].str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() & ~(allow_blank & (raw == ""))
    if integer:
        bad |= values.notna() & (values != np.round(values))
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise InputError(f"unparsable {col} value {df[col].iloc[i]!r}", row=i + 2, path=str(path))
    return values


def _fail_first(mask, message: str, path, df: pd.DataFrame | None = None, col: str | None = None):
    mask = np.asarray(mask, dtype=bool)
    if mask.any():
        i = int(np.flatnonzero(mask)[0])
        detail = f" ({col}={df[col].iloc[i]!r})" if df is not None and col else ""
        raise InputError(message + detail, row=i + 2, path=str(path))


def read_cells(path) -> pd.DataFrame:
    """Load and validate ``cells.csv``; returns a frame sorted by ``cell_id``."""
    df = _read_csv(path, CELL_COLUMNS)
    out = pd.DataFrame({"cell_id": _numeric(df, "cell_id", path, integer=True).astype(np.int64)})
    out["lat"] = _numeric(df, "lat", path)
    out["lon"] = _numeric(df, "lon", path)
    out["country"] = df["country"].str.strip()
    out["cropland_ha"] = _numeric(df, "cropland_ha", path, allow_blank=True).fillna(0.0)
    out["main_crop"] = df["main_crop"].str.strip().str.lower().replace("", "none")
    out["plant_month"] = _numeric(df, "plant_month", path, integer=True, allow_blank=True).astype("Int64")
    out["harvest_month"] = _numeric(df, "harvest_month", path, integer=True, allow_blank=True).astype("Int64")
    validate_cells(out, path)
    return out.sort_values("cell_id", kind="stable").reset_index(drop=True)


def validate_cells(cells: pd.DataFrame, path="cells") -> None:
    _fail_first(cells["cell_id"].duplicated(), "duplicate cell_id", path, cells, "cell_id")
    _fail_first(cells["country"] == "", "empty country", path)
    for col, lim in (("lat", 90), ("lon", 180)):
        v = cells[col].to_numpy(dtype=float)
        _fail_first(np.abs(v) > lim, f"{col} out of range", path, cells, col)
        off = np.abs((v - GRID_DEG / 2) / GRID_DEG - np.round((v - GRID_DEG / 2) / GRID_DEG)) > 1e-9
        _fail_first(off, f"{col} is not a 0.5 degree cell center", path, cells, col)
    _fail_first(cells[["lat", "lon"]].duplicated(), "duplicate cell coordinates", path)
    _fail_first(cells["cropland_ha"] < 0, "negative cropland_ha", path, cells, "cropland_ha")
    _fail_first(~cells["main_crop"].isin(CROPS), "unknown main_crop", path, cells, "main_crop")
    has_area = cells["cropland_ha"].to_numpy() > 0
    has_crop = (cells["main_crop"] != "none").to_numpy()
    has_cal = (cells["plant_month"].notna() & cells["harvest_month"].notna()).to_numpy()
    partial = (cells["plant_month"].notna() ^ cells["harvest_month"].notna()).to_numpy()
    _fail_first(partial, "plant_month and harvest_month must both be present or both absent", path)
    _fail_first(has_area != has_crop, "cropland_ha > 0 requires a main_crop other than none", path)
    _fail_first(has_area != has_cal, "cropland cells need a crop calendar and only they may have one", path)
    pm = cells["plant_month"].fillna(1).to_numpy(dtype=int)
    hm = cells["harvest_month"].fillna(2).to_numpy(dtype=int)
    _fail_first(has_cal & ((pm < 1) | (pm > 12) | (hm < 1) | (hm > 12)), "calendar month out of range", path)
    length = (hm - pm) % 12 + 1
    _fail_first(
        has_cal & ((length < MIN_GS_LENGTH) | (length > MAX_GS_LENGTH)),
        f"growing season must last {MIN_GS_LENGTH}-{MAX_GS_LENGTH} months",
        path,
    )


def read_weather(path) -> WeatherPanel:
    df = _read_csv(path, WEATHER_COLUMNS)
    cell = _numeric(df, "cell_id", path, integer=True).to_numpy(dtype=np.int64)
    year = _numeric(df, "year", path, integer=True).to_numpy(dtype=np.int64)
    month = _numeric(df, "month", path, integer=True).to_numpy(dtype=np.int64)
    precip = _numeric(df, "precip_mm_day", path).to_numpy(dtype=float)
    tmax = _numeric(df, "tmax_c", path).to_numpy(dtype=float)
    _fail_first((month < 1) | (month > 12), "month out of range", path, df, "month")
    _fail_first(precip < 0, "negative precipitation", path, df, "precip_mm_day")
    _fail_first(~np.isfinite(tmax), "non-finite tmax", path, df, "tmax_c")
    idx = year * 12 + month - 1
    key = pd.DataFrame({"c": cell, "t": idx})
    _fail_first(key.duplicated().to_numpy(), "duplicate (cell_id, year, month)", path)
    cell_ids = np.unique(cell)
    t0, t1 = int(idx.min()), int(idx.max())
    window = MonthWindow.from_indices(t0, t1)
    n, t = len(cell_ids), window.n_months
    if len(df) != n * t:
        counts = pd.Series(cell).value_counts()
        short = counts[counts < t]
        who = int(short.index[0]) if len(short) else int(cell_ids[0])
        raise InputError(f"weather panel is not balanced over {window}: cell_id {who} is incomplete", path=str(path))
    ci = np.searchsorted(cell_ids, cell)
    precip_a = np.empty((n, t))
    tmax_a = np.empty((n, t))
    precip_a[ci, idx - t0] = precip
    tmax_a[ci, idx - t0] = tmax
    return WeatherPanel(cell_ids, window, precip_a, tmax_a)


def read_oni(path) -> OniSeries:
    df = _read_csv(path, ONI_COLUMNS)
    years = _numeric(df, "enso_year", path, integer=True).astype(int)
    vals = _numeric(df, "dec_oni", path)
    _fail_first(years.duplicated(), "duplicate enso_year", path, df, "enso_year")
    order = np.argsort(years.to_numpy())
    ys = years.to_numpy()[order]
    gaps = np.flatnonzero(np.diff(ys) != 1)
    if len(gaps):
        raise InputError(f"ONI series has a gap: missing ENSO year {ys[gaps[0]] + 1}", path=str(path))
    return OniSeries(dict(zip(ys.tolist(), vals.to_numpy()[order].tolist())))


def read_events(path, strict: bool = False) -> pd.DataFrame:
    """Load ``events.csv``.

    With ``strict=False`` unparsable fields become NaN/NaT and the row is later
    discarded as malformed by :func:`aggregate_events`; ``strict=True`` raises.
    """
    df = _read_csv(path, EVENT_COLUMNS)
    out = pd.DataFrame({"event_id": df["event_id"], "notes": df["notes"], "row": np.arange(len(df)) + 2})
    out["date"] = pd.to_datetime(df["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    out["lat"] = pd.to_numeric(df["lat"].str.strip(), errors="coerce")
    out["lon"] = pd.to_numeric(df["lon"].str.strip(), errors="coerce")
    out["kind"] = df["kind"].str.strip()
    if strict:
        bad = malformed_events(out)
        _fail_first(bad, "malformed event", path)
    return out[["event_id", "date", "lat", "lon", "kind", "notes", "row"]]


def read_yields(path) -> pd.DataFrame:
    df = _read_csv(path, YIELD_COLUMNS)
    out = pd.DataFrame({"country": df["country"].str.strip()})
    out["year"] = _numeric(df, "year", path, integer=True).astype(int)
    out["yield_t_per_ha"] = _numeric(df, "yield_t_per_ha", path)
    _fail_first(out[["country", "year"]].duplicated(), "duplicate (country, year)", path)
    return out


_READERS = {
    "cells": read_cells,
    "weather": read_weather,
    "oni": read_oni,
    "events": read_events,
    "yields": read_yields,
}


def parse_inputs(path, schema: str):
    """Dispatch to the reader for ``schema`` (cells, weather, oni, events, yields)."""
    try:
        reader = _READERS[schema]
    except KeyError:
        raise InputError(f"unknown schema {schema!r}; expected one of {sorted(_READERS)}") from None
    return reader(path)


# --------------------------------------------------------------------------- aggregation


class EventRecord(NamedTuple):
    event_id: str
    date: object
    lat: float
    lon: float
    kind: str
    notes: str = ""


def events_frame(events) -> pd.DataFrame:
    """Coerce a list of :class:`EventRecord` (or a frame) to the event frame layout."""
    if isinstance(events, pd.DataFrame):
        df = events.copy()
    else:
        df = pd.DataFrame(list(events), columns=list(EventRecord._fields))
    if "row" not in df:
        df["row"] = np.arange(len(df)) + 2
    df["date"] = pd.to_datetime(df["date"], errors="coerce")
    df["lat"] = pd.to_numeric(df["lat"], errors="coerce")
    df["lon"] = pd.to_numeric(df["lon"], errors="coerce")
    return df


def malformed_events(df: pd.DataFrame) -> np.ndarray:
    lat = df["lat"].to_numpy(dtype=float)
    lon = df["lon"].to_numpy(dtype=float)
    return (
        df["date"].isna().to_numpy()
        | ~((lat >= -90) & (lat <= 90))
        | ~((lon >= -180) & (lon <= 180))
        | ~df["kind"].isin(KINDS).to_numpy()
    )


def aggregate_events(events, cells: pd.DataFrame, window: MonthWindow) -> tuple[ConflictPanel, pd.DataFrame]:
    """Count events per (cell, month, kind) on a balanced, zero-filled panel.

    Returns the panel and a discard report (``event_id,row,reason``) for events
    that are malformed, outside the window, or land in a cell absent from
    ``cells``. Every input event is either counted once or reported once.
    """
    df = events_frame(events)
    cell_ids = cells["cell_id"].to_numpy(dtype=np.int64)
    n, t = len(cell_ids), window.n_months
    counts = {c: np.zeros((n, t), dtype=np.int64) for c in COUNT_COLUMNS}
    reason = np.full(len(df), "", dtype=object)

    bad = malformed_events(df)
    reason[bad] = "malformed"
    ok = ~bad
    years = df["date"].dt.year.to_numpy()
    months = df["date"].dt.month.to_numpy()
    inside = np.zeros(len(df), dtype=bool)
    inside[ok] = window.contains(years[ok], months[ok])
    reason[ok & ~inside] = "outside_window"
    ok &= inside

    row_of_cell = pd.Series(np.arange(n), index=_grid_key(cells["lat"], cells["lon"]))
    pos = np.full(len(df), -1)
    if ok.any():
        a, b = grid_corners(df["lat"].to_numpy()[ok], df["lon"].to_numpy()[ok])
        keys = _grid_key(a + GRID_DEG / 2, b + GRID_DEG / 2)
        pos[ok] = row_of_cell.reindex(keys).fillna(-1).to_numpy(dtype=int)
    reason[ok & (pos < 0)] = "no_cell"
    ok &= pos >= 0

    tcol = (years[ok] * 12 + months[ok] - 1 - window.start_index).astype(int)
    rows = pos[ok]
    kinds = df["kind"].to_numpy()[ok]
    agr = agrarian_mask(df["notes"])[ok]
    for kind in KINDS:
        sel = kinds == kind
        np.add.at(counts[f"count_{kind}"], (rows[sel], tcol[sel]), 1)
        sel &= agr
        np.add.at(counts[f"count_{kind}_agrarian"], (rows[sel], tcol[sel]), 1)

    dropped = reason != ""
    report = pd.DataFrame(
        {
            "event_id": df["event_id"].to_numpy()[dropped],
            "row": df["row"].to_numpy()[dropped],
            "reason": reason[dropped],
        }
    )
    if len(report):
        logger.info("discarded %d of %d events: %s", len(report), len(df), report["reason"].value_counts().to_dict())
    return ConflictPanel(cell_ids.copy(), window, counts), report


def read_outcome(path, cells: pd.DataFrame, window: MonthWindow) -> np.ndarray:
    """Dense ``(n_cells, n_months)`` real-valued outcome from ``cell_id,year,month,y``."""
    df = _read_csv(path, ["cell_id", "year", "month", "y"])
    cell = _numeric(df, "cell_id", path, integer=True).to_numpy(dtype=np.int64)
    idx = (
        _numeric(df, "year", path, integer=True).to_numpy(dtype=np.int64) * 12
        + _numeric(df, "month", path, integer=True).to_numpy(dtype=np.int64)
        - 1
    )
    y = _numeric(df, "y", path).to_numpy(dtype=float)
    keep = (idx >= window.start_index) & (idx <= window.end_index)
    pos = _positions(cells["cell_id"].to_numpy(), cell[keep], "outcome file")
    out = np.full((len(cells), window.n_months), np.nan)
    out[pos, idx[keep] - window.start_index] = y[keep]
    if np.isnan(out).any():
        raise InputError(f"outcome file does not cover every cell-month in {window}", path=str(path))
    return out


def cell_calendar_arrays(cells: pd.DataFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(has_cropland, plant_month, harvest_month)`` arrays; months are 0 without cropland."""
    has = cells["cropland_ha"].to_numpy(dtype=float) > 0
    pm = cells["plant_month"].fillna(0).to_numpy(dtype=int)
    hm = cells["harvest_month"].fillna(0).to_numpy(dtype=int)
    return has, pm, hm


def gs_lengths(cells: pd.DataFrame) -> np.ndarray:
    has, pm, hm = cell_calendar_arrays(cells)
    return np.where(has, (hm - pm) % 12 + 1, 0)


def write_csv(df: pd.DataFrame, path) -> None:
    """Deterministic CSV writer (fixed float format, ``\\n`` line endings)."""
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


__all__ = [
    "MonthWindow",
    "GridCell",
    "grid_event",
    "grid_corners",
    "is_agrarian",
    "agrarian_keywords",
    "OniSeries",
    "WeatherPanel",
    "ConflictPanel",
    "EventRecord",
    "read_cells",
    "read_weather",
    "read_oni",
    "read_events",
    "read_yields",
    "parse_inputs",
    "aggregate_events",
]
