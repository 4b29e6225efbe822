"""Variable Lebesgue modular and norm, and the mixed norm l^q(.)(L^p(.)).

Norms are solved in log space.  For a row of cells with values |f| and
exponents p, u = log(lambda) is the root of

    g(u) = log sum_c vol_c |f_c|^{p_c} exp(-p_c u),

which is convex and strictly decreasing.  With R = rho(f) the root lies
between log(R)/p_- and log(R)/p_+, so the bracket is exact and Newton steps
started at its left end increase monotonically to the root.  A bisection
fallback guards every step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalFailure, ValidationError
from .exponents import VariableExponent
from .grid import GridFunction

DEFAULT_TOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True)
class NormResult:
    value: float
    iterations: int
    residual: float

    def __float__(self) -> float:
        return float(self.value)


def _exponent_values(p, grid) -> np.ndarray:
    if isinstance(p, VariableExponent):
        vals = p.on(grid)
    else:
        vals = np.broadcast_to(np.asarray(p, float), grid.shape)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValidationError("exponent values must be finite and positive")
    return vals


def _scalar_values(f: GridFunction) -> np.ndarray:
    if not isinstance(f, GridFunction) or f.kind != "scalar":
        raise ValidationError("expected a scalar GridFunction")
    return np.abs(f.values)


def _row_stats(e: np.ndarray, p: np.ndarray):
    """log-sum-exp of e per row and the exp(e)-weighted mean of p."""
    mx = np.max(e, axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    w = np.exp(e - mx)
    s = w.sum(axis=1)
    g = mx[:, 0] + np.log(s)
    pbar = (w * p).sum(axis=1) / s
    return g, pbar


def solve_log_norms(logabs, p, logvol, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER):
    """Batched norm solve in log space.

    ``logabs`` has shape (B, C) with -inf marking zero cells; ``p`` and
    ``logvol`` broadcast to it.  Returns (u, iterations, residuals) where
    ``u = log ||row||`` (-inf for zero rows).
    """
    a = np.atleast_2d(np.asarray(logabs, float))
    p = np.broadcast_to(np.asarray(p, float), a.shape)
    w = np.where(np.isfinite(a), p * a + np.broadcast_to(logvol, a.shape), -np.inf)
    B = a.shape[0]
    u = np.full(B, -np.inf)
    iters = np.zeros(B, int)
    resid = np.zeros(B)
    live = np.isfinite(w).any(axis=1)
    if not live.any():
        return u, iters, resid
    w, pl = w[live], p[live]
    fin = np.isfinite(w)
    pmin = np.where(fin, pl, np.inf).min(axis=1)
    pmax = np.where(fin, pl, -np.inf).max(axis=1)
    logR, _ = _row_stats(w, pl)
    lo = np.minimum(logR / pmin, logR / pmax)
    hi = np.maximum(logR / pmin, logR / pmax)
    x = lo.copy()
    g, pbar = _row_stats(w - pl * x[:, None], pl)
    active = np.abs(g) > 1e-15
    it = np.zeros(len(x), int)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        gi, pi_ = g[idx], pbar[idx]
        lo[idx] = np.where(gi > 0, x[idx], lo[idx])
        hi[idx] = np.where(gi < 0, x[idx], hi[idx])
        step = x[idx] + gi / pi_
        bad = ~np.isfinite(step) | (step <= lo[idx]) | (step >= hi[idx])
        step = np.where(bad, 0.5 * (lo[idx] + hi[idx]), step)
        moved = np.abs(step - x[idx]) > 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(step))
        x[idx] = step
        it[idx] += 1
        g[idx], pbar[idx] = _row_stats(w[idx] - pl[idx] * step[:, None], pl[idx])
        width = hi[idx] - lo[idx]
        done = ((np.abs(g[idx]) <= 1e-15) | ~moved
                | (width <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x[idx]))))
        active[idx[done]] = False
    r = np.abs(np.expm1(g))
    if np.any(r > tol):
        k = int(np.argmax(r))
        raise NumericalFailure(
            f"norm solve did not reach tolerance {tol} (residual {r[k]:.3e})",
            bracket=(float(np.exp(lo[k])), float(np.exp(hi[k]))))
    u[live], iters[live], resid[live] = x, it, r
    return u, iters, resid


def solve_norms(absf, p, vol, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER):
    """Batched L^{p(.)} norms of the rows of ``absf`` (B, C); returns (values, iters, residuals)."""
    absf = np.atleast_2d(np.asarray(absf, float))
    with np.errstate(divide="ignore"):
        la = np.log(absf)
        lv = np.log(np.asarray(vol, float))
    u, it, r = solve_log_norms(la, p, lv, tol, max_iter)
    return np.exp(u), it, r


def modular(f: GridFunction, p) -> float:
    """sum over cells of |f|^p vol."""
    a = _scalar_values(f)
    pv = _exponent_values(p, f.grid)
    return float(np.sum(a**pv) * f.grid.cell_volume)


def norm(f: GridFunction, p, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> NormResult:
    """Luxemburg norm: the lambda with rho(f/lambda) = 1 (0 for f = 0)."""
    a = _scalar_values(f)
    pv = _exponent_values(p, f.grid)
    v, it, r = solve_norms(a.reshape(1, -1), pv.reshape(1, -1), f.grid.cell_volume, tol, max_iter)
    return NormResult(float(v[0]), int(it[0]), float(r[0]))


def _stack_levels(seq) -> tuple[np.ndarray, object]:
    if isinstance(seq, GridFunction):
        seq = [seq]
    seq = list(seq)
    if not seq:
        raise ValidationError("empty level list")
    grid = seq[0].grid
    for f in seq:
        if f.grid != grid:
            raise ValidationError("levels live on different meshes")
    return np.stack([_scalar_values(f) for f in seq]).reshape(len(seq), -1), grid


def _level_logs(absf: np.ndarray, pv, qv, logvol, v: float, tol):
    """log ||(|f_j| e^{-v})^q||_{L^{p/q}} for every level j."""
    with np.errstate(divide="ignore"):
        la = np.log(absf)
    u, _, _ = solve_log_norms(qv * (la - v), pv / qv, logvol, tol)
    return u


def mixed_modular_arrays(absf: np.ndarray, pv: np.ndarray, qv: np.ndarray, vol: float,
                         tol: float = DEFAULT_TOL) -> float:
    u = _level_logs(absf, pv, qv, np.log(vol), 0.0, tol)
    return float(np.sum(np.exp(u)))


def mixed_norm_arrays(absf: np.ndarray, pv: np.ndarray, qv: np.ndarray, vol: float,
                      tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> NormResult:
    """Mixed norm from raw arrays: absf (J, C), pv and qv (C,) or (J, C)."""
    absf = np.asarray(absf, float)
    if not np.any(absf > 0):
        return NormResult(0.0, 0, 0.0)
    logvol = np.log(vol)
    inner_tol = min(tol, 1e-12)

    def h(v):
        u = _level_logs(absf, pv, qv, logvol, v, inner_tol)
        u = u[np.isfinite(u)]
        mx = u.max()
        return mx + np.log(np.sum(np.exp(u - mx)))

    # h is decreasing in v; find a sign change by geometric expansion
    a = float(np.log(absf.max()))
    ha = h(a)
    step = 1.0
    b, hb = a, ha
    for _ in range(max_iter):
        b = a + step if ha > 0 else a - step
        hb = h(b)
        if np.sign(hb) != np.sign(ha) or hb == 0:
            break
        a, ha = b, hb
        step *= 2
    else:
        raise NumericalFailure("mixed norm: no sign change found", bracket=(np.exp(a), np.exp(b)))
    if hb == 0:
        v = b
        iters = 0
    else:
        lo, hi = sorted((a, b))
        v, info = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                         maxiter=max_iter, full_output=True, disp=False)
        if not info.converged:
            raise NumericalFailure("mixed norm outer solve did not converge",
                                   bracket=(np.exp(lo), np.exp(hi)))
        iters = info.iterations
    resid = abs(np.expm1(h(v)))
    if resid > tol:
        raise NumericalFailure(f"mixed norm residual {resid:.3e} above tolerance",
                               bracket=(np.exp(v), np.exp(v)))
    return NormResult(float(np.exp(v)), int(iters), float(resid))


def mixed_modular(seq: Sequence[GridFunction], p, q, tol: float = DEFAULT_TOL) -> float:
    """sum_j || |f_j|^{q} ||_{L^{p/q}}."""
    absf, grid = _stack_levels(seq)
    pv = _exponent_values(p, grid).reshape(-1)
    qv = _exponent_values(q, grid).reshape(-1)
    return mixed_modular_arrays(absf, pv, qv, grid.cell_volume, tol)


def mixed_norm(seq: Sequence[GridFunction], p, q, tol: float = DEFAULT_TOL,
               max_iter: int = MAX_ITER) -> NormResult:
    """The mu with mixed_modular({f_j / mu}) = 1."""
    absf, grid = _stack_levels(seq)
    pv = _exponent_values(p, grid).reshape(-1)
    qv = _exponent_values(q, grid).reshape(-1)
    return mixed_norm_arrays(absf, pv, qv, grid.cell_volume, tol, max_iter)
