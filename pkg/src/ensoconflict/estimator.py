"""Fixed-effects estimators.

* :func:`absorb` removes two (or more) categorical fixed effects by alternating
  projections: each sweep subtracts the (weighted) group means of every factor
  in turn, Gauss-Seidel style, until the largest remaining group mean is below
  ``tol * scale``.
* :func:`hdfe_ols` is the within estimator on absorbed data.
* :func:`hdfe_ppml` is Poisson pseudo-maximum-likelihood by IRLS, re-absorbing
  the fixed effects with the current weights in every step.
* :func:`ols_fe_trend` handles unit intercepts plus unit-specific linear trends
  by exact per-unit detrending.

Every fit carries what the covariance code needs: absorbed regressors, the
working residuals, IRLS weights (ones for OLS) and the kept rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ensoconflict.errors import CollinearityError, ConvergenceError, InputError, SpecError
from ensoconflict.panel import DesignMatrix

ABSORB_TOL = 1e-10
ABSORB_MAX_ITER = 10_000
PPML_TOL = 1e-9
PPML_MAX_ITER = 200
COLLINEAR_TOL = 1e-10


@dataclass
class RegressionFit:
    names: list[str]
    beta: np.ndarray
    residuals: np.ndarray
    demeaned_X: np.ndarray
    weights: np.ndarray
    kept_rows: np.ndarray
    dropped_rows: np.ndarray
    n_effective: int
    converged: bool
    iterations: int
    objective_trace: list[float] = field(default_factory=list)
    method: str = "ols"
    absorb_iterations: int = 0
    design: DesignMatrix | None = None
    fitted: np.ndarray | None = None
    dropped_groups: dict = field(default_factory=dict)

    @property
    def coef(self) -> dict[str, float]:
        return dict(zip(self.names, self.beta.tolist()))

    @property
    def scores(self) -> np.ndarray:
        """Per-row score contributions ``x~_i w_i e_i`` (kept rows only)."""
        return self.demeaned_X * (self.weights * self.residuals)[:, None]

    def bread(self) -> np.ndarray:
        Xw = self.demeaned_X * self.weights[:, None]
        return np.linalg.inv(self.demeaned_X.T @ Xw)

    def row_attr(self, name: str) -> np.ndarray | None:
        """A per-row design attribute (``coords``, ``period``, ...) restricted to kept rows."""
        if self.design is None:
            return None
        a = getattr(self.design, name)
        return None if a is None else a[self.kept_rows]


# --------------------------------------------------------------------------- absorption


def _as_codes(fe) -> list[np.ndarray]:
    out = []
    for f in fe:
        f = np.asarray(f)
        if f.dtype.kind not in "iu":
            f = np.unique(f, return_inverse=True)[1]
        elif len(f) and (f.min() < 0):
            raise InputError("fixed-effect codes must be non-negative")
        out.append(f.astype(np.intp, copy=False))
    return out


def absorb(
    v: np.ndarray,
    fe,
    weights: np.ndarray | None = None,
    tol: float = ABSORB_TOL,
    max_iter: int = ABSORB_MAX_ITER,
    return_iterations: bool = False,
):
    """Partial out the fixed-effect factors ``fe`` from ``v`` (vector or column matrix).

    Convergence is declared when every (weighted) group mean of every factor is
    below ``tol`` times the column's largest absolute value. Columns that already
    meet this on entry are returned unchanged.
    """
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    out = v.reshape(len(v), -1).copy()
    codes = _as_codes(fe)
    if not codes:
        result = out[:, 0] if squeeze else out
        return (result, 0) if return_iterations else result
    if any(len(c) != len(out) for c in codes):
        raise InputError("fixed-effect factors must cover every row")
    w = np.ones(len(out)) if weights is None else np.asarray(weights, dtype=float)
    sizes = [np.bincount(c, weights=w) for c in codes]
    inv = [np.divide(1.0, s, out=np.zeros_like(s), where=s > 0) for s in sizes]
    scale = np.abs(out).max(axis=0) if len(out) else np.zeros(out.shape[1])
    scale[scale == 0] = 1.0
    # a single factor is an exact one-pass projection
    n_iter = 1 if len(codes) == 1 else max_iter
    active = np.arange(out.shape[1])

    def means(k, cols):
        return np.column_stack(
            [np.bincount(codes[k], weights=w * out[:, j], minlength=len(inv[k])) * inv[k] for j in cols]
        )

    # columns that are already demeaned are left untouched, which makes absorb idempotent
    worst = np.max([np.abs(means(k, active)).max(axis=0) for k in range(len(codes))], axis=0) / scale
    active = active[worst >= tol]
    it = 0
    if active.size == 0:
        result = out[:, 0] if squeeze else out
        return (result, it) if return_iterations else result
    for it in range(1, n_iter + 1):
        for k in range(len(codes)):
            out[:, active] -= means(k, active)[codes[k]]
        if len(codes) == 1:
            break
        # measured against the current column scale, so the output passes the entry check above
        current = np.abs(out[:, active]).max(axis=0)
        current[current == 0] = 1.0
        worst = np.max(
            [np.abs(means(k, active)).max(axis=0) for k in range(len(codes) - 1)], axis=0
        ) / current
        active = active[worst >= tol]
        if active.size == 0:
            break
    else:
        norm = float(np.linalg.norm(means(0, active)))
        raise ConvergenceError(
            f"fixed-effect absorption did not converge in {max_iter} iterations "
            f"(residual group-mean norm {norm:.3e})"
        )
    result = out[:, 0] if squeeze else out
    return (result, it) if return_iterations else result


def collinear_columns(X: np.ndarray, names: list[str], tol: float = COLLINEAR_TOL) -> list[str]:
    """Names of columns that a pivoted QR finds linearly dependent on the others."""
    if X.shape[1] == 0:
        return []
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return list(names)
    rank = int(np.sum(diag > tol * diag[0]))
    return [names[j] for j in sorted(piv[rank:])]


def _solve(X: np.ndarray, y: np.ndarray, names: list[str], w: np.ndarray | None = None) -> np.ndarray:
    if w is not None:
        sw = np.sqrt(w)
        X, y = X * sw[:, None], y * sw
    bad = collinear_columns(X, names)
    if bad:
        raise CollinearityError(bad)
    return np.linalg.lstsq(X, y, rcond=None)[0]


# --------------------------------------------------------------------------- OLS


def hdfe_ols(design: DesignMatrix, tol: float = ABSORB_TOL, max_iter: int = ABSORB_MAX_ITER) -> RegressionFit:
    if not design.names:
        raise SpecError("design has no regressors")
    stacked = np.column_stack([design.y, design.X])
    tilde, iters = absorb(stacked, design.fe, tol=tol, max_iter=max_iter, return_iterations=True)
    yt, Xt = tilde[:, 0], tilde[:, 1:]
    beta = _solve(Xt, yt, design.names)
    resid = yt - Xt @ beta
    n = design.n
    return RegressionFit(
        names=list(design.names),
        beta=beta,
        residuals=resid,
        demeaned_X=Xt,
        weights=np.ones(n),
        kept_rows=np.arange(n),
        dropped_rows=np.array([], dtype=np.intp),
        n_effective=n,
        converged=True,
        iterations=1,
        objective_trace=[float(resid @ resid)],
        method="ols",
        absorb_iterations=iters,
        design=design,
        fitted=design.y - resid,
    )


# --------------------------------------------------------------------------- PPML


def drop_zero_groups(y: np.ndarray, fe) -> tuple[np.ndarray, dict[int, int]]:
    """Boolean keep-mask after recursively removing groups whose outcome is all zero.

    Returns the mask and, per factor index, how many groups were removed.
    """
    codes = _as_codes(fe)
    keep = np.ones(len(y), dtype=bool)
    removed = {k: 0 for k in range(len(codes))}
    changed = True
    while changed:
        changed = False
        for k, c in enumerate(codes):
            present = np.bincount(c[keep], minlength=c.max() + 1 if len(c) else 0) > 0
            total = np.bincount(c[keep], weights=y[keep], minlength=len(present))
            zero = present & (total <= 0)
            if zero.any():
                keep &= ~zero[c]
                removed[k] += int(zero.sum())
                changed = True
    return keep, removed


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def hdfe_ppml(
    design: DesignMatrix,
    tol: float = PPML_TOL,
    max_iter: int = PPML_MAX_ITER,
    absorb_tol: float = ABSORB_TOL,
) -> RegressionFit:
    """Poisson PML with both fixed effects absorbed inside each IRLS step."""
    if not design.names:
        raise SpecError("design has no regressors")
    y_all = design.y
    if (y_all < 0).any():
        raise InputError("Poisson outcome must be non-negative")
    keep, removed = drop_zero_groups(y_all, design.fe)
    if not keep.any():
        raise ConvergenceError("every row belongs to an all-zero fixed-effect group")
    kept = np.flatnonzero(keep)
    y = y_all[kept]
    X = design.X[kept]
    fe = [np.unique(f[kept], return_inverse=True)[1] for f in design.fe]

    eta = np.log(y + 0.5)
    mu = np.exp(eta)
    dev_old = poisson_deviance(y, mu)
    trace = [dev_old]
    absorb_total = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        tilde, k = absorb(np.column_stack([z, X]), fe, weights=mu, tol=absorb_tol, return_iterations=True)
        absorb_total += k
        zt, Xt = tilde[:, 0], tilde[:, 1:]
        beta = _solve(Xt, zt, design.names, w=mu)
        eta = z - (zt - Xt @ beta)
        if eta.max() > 700:
            raise ConvergenceError("Poisson linear predictor overflowed; the model may be separated")
        mu = np.exp(eta)
        dev = poisson_deviance(y, mu)
        trace.append(dev)
        if abs(dev - dev_old) / max(min(dev, dev_old), 0.1) < tol:
            converged = True
            break
        dev_old = dev
    if not converged:
        raise ConvergenceError(f"PPML did not converge in {max_iter} IRLS iterations (deviance {trace[-1]:.6g})")

    Xt = absorb(X, fe, weights=mu, tol=absorb_tol)
    return RegressionFit(
        names=list(design.names),
        beta=beta,
        residuals=(y - mu) / mu,
        demeaned_X=Xt,
        weights=mu,
        kept_rows=kept,
        dropped_rows=np.flatnonzero(~keep),
        n_effective=len(kept),
        converged=True,
        iterations=it,
        objective_trace=trace,
        method="ppml",
        absorb_iterations=absorb_total,
        design=design,
        fitted=mu,
        dropped_groups={design.fe_names[k]: v for k, v in removed.items()},
    )


# --------------------------------------------------------------------------- unit trends


def detrend_within(v: np.ndarray, unit: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Residuals of every column of ``v`` on ``{1, t}`` separately within each unit."""
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    v = v.reshape(len(v), -1)
    codes = _as_codes([unit])[0]
    n_g = np.bincount(codes).astype(float)
    tc = t - (np.bincount(codes, weights=t) / n_g)[codes]
    stt = np.bincount(codes, weights=tc * tc)
    out = np.empty_like(v)
    for j in range(v.shape[1]):
        vc = v[:, j] - (np.bincount(codes, weights=v[:, j]) / n_g)[codes]
        slope = np.divide(np.bincount(codes, weights=tc * vc), stt, out=np.zeros_like(stt), where=stt > 0)
        out[:, j] = vc - slope[codes] * tc
    return out[:, 0] if squeeze else out


def ols_fe_trend(design: DesignMatrix) -> RegressionFit:
    """OLS with unit intercepts and unit-specific linear trends (yield regression)."""
    if design.trend is None or len(design.fe) != 1:
        raise SpecError("unit-trend OLS needs exactly one unit factor and a trend column")
    unit = design.fe[0]
    counts = np.bincount(_as_codes([unit])[0])
    if (counts[counts > 0] < 3).any():
        raise InputError("every unit needs at least 3 years for intercept plus trend")
    tilde = detrend_within(np.column_stack([design.y, design.X]), unit, design.trend)
    yt, Xt = tilde[:, 0], tilde[:, 1:]
    beta = _solve(Xt, yt, design.names)
    resid = yt - Xt @ beta
    n = design.n
    return RegressionFit(
        names=list(design.names),
        beta=beta,
        residuals=resid,
        demeaned_X=Xt,
        weights=np.ones(n),
        kept_rows=np.arange(n),
        dropped_rows=np.array([], dtype=np.intp),
        n_effective=n,
        converged=True,
        iterations=1,
        objective_trace=[float(resid @ resid)],
        method="ols_trend",
        design=design,
        fitted=design.y - resid,
    )


def estimate(design: DesignMatrix, method: str = "ols", **kw) -> RegressionFit:
    if method == "ols":
        return hdfe_ols(design, **kw)
    if method == "ppml":
        return hdfe_ppml(design, **kw)
    raise SpecError(f"unknown estimator {method!r}")
