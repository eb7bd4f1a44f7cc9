"""Sandwich covariances and percent-effect transforms.

All covariances share the bread ``(X~' W X~)^-1`` of the fit (``W`` are IRLS
weights, ones for OLS) and differ in the meat built from the score rows
``s_i = x~_i w_i e_i``.

Conley meat: scores are first summed per (location, period). Within a period,
locations are paired through a sparse kernel matrix whose nonzeros come from a
latitude-banded neighbour search, so the work grows with the number of pairs
inside the cutoff rather than with the square of the number of locations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse, stats

from ensoconflict.errors import InputError, SpecError
from ensoconflict.estimator import RegressionFit

EARTH_RADIUS_KM = 6371.0
Z95 = float(stats.norm.ppf(0.975))


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass
class CovarianceResult:
    names: list[str]
    vcov: np.ndarray
    method: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vcov = (self.vcov + self.vcov.T) / 2

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def sub(self, terms: list[str]) -> np.ndarray:
        idx = [self._index(t) for t in terms]
        return self.vcov[np.ix_(idx, idx)]

    def _index(self, term: str) -> int:
        try:
            return self.names.index(term)
        except ValueError:
            raise SpecError(f"term {term!r} not in covariance ({', '.join(self.names)})") from None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.vcov, index=self.names, columns=self.names)


def pvalue(z) -> np.ndarray:
    """Two-sided asymptotic-normal p-value."""
    return 2.0 * stats.norm.sf(np.abs(z))


def stars(p: float) -> int:
    if p < 0.01:
        return 3
    if p < 0.05:
        return 2
    if p < 0.10:
        return 1
    return 0


def _sandwich(fit: RegressionFit, meat: np.ndarray, method: dict) -> CovarianceResult:
    bread = fit.bread()
    return CovarianceResult(list(fit.names), bread @ meat @ bread, method)


def hc0(fit: RegressionFit) -> CovarianceResult:
    s = fit.scores
    return _sandwich(fit, s.T @ s, {"type": "hc0"})


def cluster_cov(fit: RegressionFit, cluster=None, small_sample: bool = False) -> CovarianceResult:
    """Cluster-robust (CR0) covariance; ``small_sample`` multiplies by ``G/(G-1)``."""
    if cluster is None:
        cluster = fit.row_attr("cluster")
        if cluster is None:
            raise SpecError("no cluster variable given and the design has none")
    elif len(cluster) != fit.n_effective:
        cluster = np.asarray(cluster)[fit.kept_rows]
    codes = np.unique(np.asarray(cluster), return_inverse=True)[1]
    g = int(codes.max()) + 1 if len(codes) else 0
    if g < 2:
        raise SpecError("cluster-robust covariance needs at least 2 clusters")
    s = fit.scores
    sums = np.zeros((g, s.shape[1]))
    np.add.at(sums, codes, s)
    meat = sums.T @ sums
    if small_sample:
        meat *= g / (g - 1)
    return _sandwich(fit, meat, {"type": "cluster", "n_clusters": g, "small_sample": small_sample})


# --------------------------------------------------------------------------- Conley


def neighbor_pairs(lat: np.ndarray, lon: np.ndarray, cutoff_km: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All ordered pairs ``(i, j)`` (self pairs included) within ``cutoff_km``, with distances.

    Points are bucketed into latitude bands one cutoff wide, so only the same
    and the next band need checking for each point.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = len(lat)
    band_deg = math.degrees(cutoff_km / EARTH_RADIUS_KM)
    if not np.isfinite(band_deg) or band_deg >= 180:
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        return ii, jj, haversine_km(lat[ii], lon[ii], lat[jj], lon[jj])
    band = np.floor((lat + 90.0) / band_deg).astype(np.int64)
    order = np.lexsort((lon, band))
    sorted_band = band[order]
    starts = {}
    uniq, first, counts = np.unique(sorted_band, return_index=True, return_counts=True)
    for b, f, c in zip(uniq, first, counts):
        starts[int(b)] = order[f : f + c]
    out_i, out_j, out_d = [], [], []
    for b, members in starts.items():
        # the same band (both directions covered by the full block) and the band above
        for other_b in (b, b + 1):
            others = starts.get(other_b)
            if others is None:
                continue
            d = haversine_km(lat[members][:, None], lon[members][:, None], lat[others][None, :], lon[others][None, :])
            a, c = np.nonzero(d <= cutoff_km)
            i, j, dist = members[a], others[c], d[a, c]
            out_i.append(i)
            out_j.append(j)
            out_d.append(dist)
            if other_b != b:
                out_i.append(j)
                out_j.append(i)
                out_d.append(dist)
    if not out_i:
        return (np.array([], dtype=np.intp),) * 2 + (np.array([]),)
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_d)


def kernel_matrix(lat, lon, cutoff_km: float, kernel: str = "uniform") -> sparse.csr_matrix:
    if kernel not in ("uniform", "bartlett"):
        raise SpecError(f"kernel must be uniform or bartlett, got {kernel!r}")
    i, j, d = neighbor_pairs(lat, lon, cutoff_km)
    w = np.ones_like(d) if kernel == "uniform" or not np.isfinite(cutoff_km) else 1.0 - d / cutoff_km
    n = len(lat)
    return sparse.csr_matrix((w, (i, j)), shape=(n, n))


def _locations(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer location code per row and the unique (lat, lon) table."""
    coords = np.asarray(coords, dtype=float)
    # rounding only decides which rows share a location; distances use the real coordinates
    keys = np.round(coords * 1e6).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return inv.ravel(), coords[first]


def conley_cov(
    fit: RegressionFit,
    coords: np.ndarray | None = None,
    period: np.ndarray | None = None,
    cutoff_km: float = 500.0,
    kernel: str = "uniform",
    time_lags: int = 0,
    block_bytes: int = 64 * 2**20,
) -> CovarianceResult:
    """Conley spatial HAC covariance with a distance cutoff.

    Pairs of rows in the same period whose locations are within ``cutoff_km``
    enter the meat with weight 1 (uniform) or ``1 - d/cutoff`` (Bartlett). With
    ``time_lags = L > 0``, the same location's scores ``l <= L`` periods apart
    are added with weight ``1 - l/(L+1)``.
    """
    coords = fit.row_attr("coords") if coords is None else np.asarray(coords)[_rows(fit, coords)]
    period = fit.row_attr("period") if period is None else np.asarray(period)[_rows(fit, period)]
    if coords is None or period is None:
        raise InputError("Conley covariance needs per-row coordinates and periods")
    if time_lags < 0:
        raise SpecError("time_lags must be >= 0")
    s = fit.scores
    k = s.shape[1]
    loc, table = _locations(coords)
    per = np.asarray(period, dtype=np.int64)
    per = per - per.min()
    n_loc, n_per = len(table), int(per.max()) + 1

    meat = np.zeros((k, k))
    infinite = not np.isfinite(cutoff_km)
    W = None if infinite else kernel_matrix(table[:, 0], table[:, 1], cutoff_km, kernel)
    # work in blocks of periods so the (location, period, k) score cube stays bounded
    step = max(1, int(block_bytes // max(1, n_loc * k * 8)))
    order = np.argsort(per, kind="stable")
    per_sorted = per[order]
    bounds = np.searchsorted(per_sorted, np.arange(0, n_per + step, step))
    for b in range(len(bounds) - 1):
        rows = order[bounds[b] : bounds[b + 1]]
        if rows.size == 0:
            continue
        p0 = b * step
        nb = min(step, n_per - p0)
        A = np.zeros((n_loc, nb, k))
        np.add.at(A, (loc[rows], per[rows] - p0), s[rows])
        if infinite:
            tot = A.sum(axis=0)
            meat += tot.T @ tot
        else:
            WA = (W @ A.reshape(n_loc, nb * k)).reshape(n_loc, nb, k)
            meat += np.einsum("lti,ltj->ij", A, WA)

    if time_lags > 0:
        A = np.zeros((n_loc, n_per, k))
        np.add.at(A, (loc, per), s)
        for lag in range(1, time_lags + 1):
            if lag >= n_per:
                break
            cross = np.einsum("lti,ltj->ij", A[:, :-lag], A[:, lag:])
            meat += (1.0 - lag / (time_lags + 1)) * (cross + cross.T)

    return _sandwich(
        fit,
        meat,
        {"type": "conley", "cutoff_km": cutoff_km, "kernel": kernel, "time_lags": time_lags},
    )


def _rows(fit: RegressionFit, a) -> np.ndarray:
    """Index into a per-row array given either for all design rows or only kept ones."""
    return np.arange(fit.n_effective) if len(a) == fit.n_effective else fit.kept_rows


def covariance(fit: RegressionFit, method: str = "conley", **kw) -> CovarianceResult:
    if method == "conley":
        return conley_cov(fit, **kw)
    if method == "cluster":
        return cluster_cov(fit, **kw)
    if method == "hc0":
        return hc0(fit)
    raise SpecError(f"unknown covariance method {method!r}")


def coef_table(fit: RegressionFit, cov: CovarianceResult) -> pd.DataFrame:
    se = cov.se
    with np.errstate(divide="ignore", invalid="ignore"):
        p = pvalue(fit.beta / se)
    return pd.DataFrame(
        {"term": fit.names, "beta": fit.beta, "se": se, "p": p, "stars": [stars(x) for x in p]}
    )


# --------------------------------------------------------------------------- effects


@dataclass(frozen=True)
class EffectEstimate:
    label: str
    pct: float
    se_pct: float
    p_value: float
    stars: int
    coef_sum: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.pct - Z95 * self.se_pct, self.pct + Z95 * self.se_pct


def _sum_and_var(fit, cov, terms) -> tuple[float, float]:
    if not terms:
        raise SpecError("need at least one coefficient term")
    coef = fit if isinstance(fit, dict) else fit.coef
    missing = [t for t in terms if t not in coef]
    if missing:
        raise SpecError(f"terms not in fit: {missing}")
    s = float(sum(coef[t] for t in terms))
    var = 0.0 if cov is None else float(np.sum(cov.sub(terms)))
    return s, var


def effect_scale(mean_tc: float, mean_area: float, mean_conflict: float, *, use_tc: bool = True, use_area: bool = True) -> float:
    """Percent per unit of coefficient sum; the indicator variants drop their factor."""
    if mean_conflict == 0:
        raise SpecError("mean conflict is zero; percent effect undefined")
    scale = 100.0 / mean_conflict
    if use_tc:
        scale *= mean_tc
    if use_area:
        scale *= mean_area
    return scale


def _estimate(label, pct, se_pct, s, var) -> EffectEstimate:
    se_s = math.sqrt(max(var, 0.0))
    p = float(pvalue(s / se_s)) if se_s > 0 else (0.0 if s != 0 else 1.0)
    return EffectEstimate(label, pct, se_pct, p, stars(p), s)


def linear_effect_pct(fit, cov, terms, summary, *, use_tc: bool = True, use_area: bool = True, label: str | None = None) -> EffectEstimate:
    """Percent of mean conflict implied by a one-unit ONI shift at mean exposure.

    ``fit`` may be a :class:`RegressionFit` or a plain ``{term: beta}`` mapping;
    ``cov`` may be ``None`` for point arithmetic. ``summary`` is a
    :class:`~ensoconflict.panel.CroplandSummary` or any object with
    ``mean_tc``, ``mean_area`` and ``mean_conflict``.
    """
    s, var = _sum_and_var(fit, cov, terms)
    scale = effect_scale(summary.mean_tc, summary.mean_area, summary.mean_conflict, use_tc=use_tc, use_area=use_area)
    return _estimate(label or "+".join(terms), s * scale, abs(scale) * math.sqrt(max(var, 0.0)), s, var)


def poisson_effect_pct(fit, cov, terms, *, label: str | None = None) -> EffectEstimate:
    s, var = _sum_and_var(fit, cov, terms)
    pct = math.expm1(s) * 100.0
    se = math.exp(s) * math.sqrt(max(var, 0.0)) * 100.0
    return _estimate(label or "+".join(terms), pct, se, s, var)


def reported_discrepancy(computed_pct: float, reported_pct: float, slack: float = 0.15) -> bool:
    """True when a recomputed effect is further than ``slack`` points from a published one."""
    return abs(computed_pct - reported_pct) > slack
