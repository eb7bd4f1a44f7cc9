"""Crop-year month arithmetic.

Months are 1-12. A *dated* month is a ``(year, month)`` pair. ENSO year ``t``
runs June of ``t`` through May of ``t + 1``; a crop year starts at the harvest
month. Scalar helpers also accept numpy integer arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ensoconflict.errors import MissingOniError, SpecError

MIN_GS_LENGTH = 2
MAX_GS_LENGTH = 8
EVENT_OFFSETS = tuple(range(-4, 8))


def season_length(start_month: int, end_month: int) -> int:
    """Inclusive length of the wraparound span ``start..end`` (1 to 12)."""
    return (end_month - start_month) % 12 + 1


def _span(start_month: int, end_month: int) -> list[int]:
    n = season_length(start_month, end_month)
    return [(start_month - 1 + k) % 12 + 1 for k in range(n)]


@dataclass(frozen=True)
class CropCalendar:
    plant_month: int
    harvest_month: int
    gs_months: tuple[int, ...]

    def __post_init__(self):
        if not MIN_GS_LENGTH <= len(self.gs_months) <= MAX_GS_LENGTH:
            raise SpecError(
                f"growing season {self.plant_month}->{self.harvest_month} has "
                f"{len(self.gs_months)} months; expected {MIN_GS_LENGTH}-{MAX_GS_LENGTH}"
            )
        if self.gs_months[0] != self.plant_month or self.gs_months[-1] != self.harvest_month:
            raise SpecError("gs_months must run from plant_month to harvest_month")


def enso_year_of(year, month):
    """ENSO year label of calendar ``(year, month)``."""
    if np.ndim(year) or np.ndim(month):
        return np.where(np.asarray(month) >= 6, year, np.asarray(year) - 1)
    return year if month >= 6 else year - 1


def harvest_midpoint(start_month: int, end_month: int) -> int:
    """Middle month of a harvest season; even spans take the earlier central month."""
    months = _span(start_month, end_month)
    return months[(len(months) - 1) // 2]


def growing_season(plant: int, harvest: int) -> CropCalendar:
    for m in (plant, harvest):
        if not 1 <= m <= 12:
            raise SpecError(f"month out of range: {m}")
    return CropCalendar(plant, harvest, tuple(_span(plant, harvest)))


def dated_gs_months(cal: CropCalendar, harvest_year: int) -> list[tuple[int, int]]:
    """Calendar-date every growing-season month, counting back from the harvest."""
    n = len(cal.gs_months)
    out = []
    for k, month in enumerate(cal.gs_months):
        back = n - 1 - k
        idx = harvest_year * 12 + (cal.harvest_month - 1) - back
        out.append((idx // 12, month))
    return out


def gs_enso_lag(cal: CropCalendar, tc_months: Iterable[int] = ()) -> int:
    """0 if the growing season takes the concurrent ENSO year, 1 for the previous one.

    The choice depends only on the calendar and the teleconnected months, never on
    the harvest year, so the panel builder computes it once per cell.
    """
    tc = set(tc_months) & set(cal.gs_months)
    counted = tc if tc else set(cal.gs_months)
    # any harvest year works; only the relative ENSO year matters
    dated = dated_gs_months(cal, 2001)
    concurrent = enso_year_of(2001, cal.harvest_month)
    n_now = sum(1 for y, m in dated if m in counted and enso_year_of(y, m) == concurrent)
    n_prev = sum(1 for y, m in dated if m in counted and enso_year_of(y, m) == concurrent - 1)
    return 0 if n_now >= n_prev else 1


def assign_gs_enso(
    cal: CropCalendar,
    harvest_year: int,
    tc_months: Iterable[int],
    oni: Mapping[int, float],
) -> tuple[float, int]:
    """December ONI assigned to the growing season that ends at ``(harvest_year, harvest)``.

    Returns ``(dec_oni, enso_year)``. Teleconnected months are counted in each of
    the (at most two) ENSO years the season touches; the concurrent year wins ties.
    Without teleconnected months every season month counts.
    """
    year = enso_year_of(harvest_year, cal.harvest_month) - gs_enso_lag(cal, tc_months)
    try:
        value = oni[year]
    except KeyError:
        raise MissingOniError(year) from None
    return float(value), int(year)


def _within3(m, anchor):
    hit = (np.asarray(m) - anchor) % 12 < 3
    return hit.astype(np.int8) if hit.ndim else int(hit)


def postharvest_dummy(m, harvest_month):
    """1 for the harvest month and the two months after it."""
    return _within3(m, harvest_month)


def postplanting_dummy(m, plant_month):
    """1 for the planting month and the two months after it."""
    return _within3(m, plant_month)


def event_offset(m, harvest_month):
    d = (np.asarray(m) - harvest_month) % 12
    j = np.where(d <= 7, d, d - 12)
    return j if j.ndim else int(j)


def crop_year_of(year, month, harvest_month):
    """Calendar year in which the crop year containing ``(year, month)`` started."""
    idx = np.asarray(year) * 12 + np.asarray(month) - 1
    start = idx - (np.asarray(month) - harvest_month) % 12
    label = start // 12
    return label if label.ndim else int(label)
