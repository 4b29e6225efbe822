"""Variable exponents p(.), q(.), s(.) and their log-Hoelder constants."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ValidationError
from .grid import Grid

FAMILIES = ("constant", "log_perturbed", "bump", "sampled", "derived")


def _norm_last(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _select(x: np.ndarray, axes) -> np.ndarray:
    return x if axes is None else x[..., list(axes)]


@dataclass(frozen=True, eq=False)
class VariableExponent:
    """A real exponent field with cached bounds.

    ``func`` maps points of shape ``(..., n)`` to values of shape ``(...)``.
    ``p_minus``/``p_plus`` are bounds valid everywhere on the box; for the
    closed-form families they are the exact infimum and supremum.
    """

    family: str
    params: dict
    p_minus: float
    p_plus: float
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    r_infinity: float | None = None
    n: int | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.ndim == 0:
            x = x[None]
        return np.asarray(self.func(x), float)

    def on(self, grid: Grid) -> np.ndarray:
        """Values at cell centers, shape ``grid.shape``."""
        return self(grid.centers())

    @property
    def is_constant(self) -> bool:
        return self.p_minus == self.p_plus

    # ---- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value: float) -> "VariableExponent":
        v = float(value)
        return cls("constant", {"value": v}, v, v,
                   lambda x: np.full(x.shape[:-1], v), r_infinity=v)

    @classmethod
    def log_perturbed(cls, r_inf: float, c: float, axes=None) -> "VariableExponent":
        """r_inf + c / log(e + |x|); ``axes`` restricts |x| to some coordinates."""
        r_inf, c = float(r_inf), float(c)
        lo, hi = sorted((r_inf, r_inf + c))

        def f(x):
            return r_inf + c / np.log(math.e + _norm_last(_select(x, axes)))
        return cls("log_perturbed", {"r_inf": r_inf, "c": c, "axes": axes}, lo, hi, f,
                   r_infinity=r_inf)

    @classmethod
    def bump(cls, lo: float, hi: float, center=0.0, width: float = 1.0,
             axes=None) -> "VariableExponent":
        """Smooth two-level profile lo + (hi - lo) exp(-|x - center|^2 / width^2)."""
        lo, hi, width = float(lo), float(hi), float(width)
        if width <= 0:
            raise ValidationError("bump width must be positive")
        ctr = np.atleast_1d(np.asarray(center, float))

        def f(x):
            d2 = np.sum((_select(x, axes) - ctr) ** 2, axis=-1)
            return lo + (hi - lo) * np.exp(-d2 / width**2)
        a, b = sorted((lo, hi))
        return cls("bump", {"lo": lo, "hi": hi, "center": ctr.tolist(), "width": width,
                    "axes": axes},
                   a, b, f, r_infinity=lo)

    @classmethod
    def sampled(cls, grid: Grid, values, r_infinity: float | None = None) -> "VariableExponent":
        """Piecewise constant on the cells of ``grid``."""
        vals = np.asarray(values, float)
        if vals.shape != grid.shape:
            raise ValidationError(f"samples of shape {vals.shape} do not match grid {grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("exponent samples must be finite")
        vals = vals.copy()
        vals.setflags(write=False)

        def f(x):
            x = np.asarray(x, float)
            if np.any(x < grid.lo) or np.any(x >= grid.lo + grid.side):
                raise ValidationError("point outside the sampled exponent's box")
            # points just below the upper edge may round onto it
            idx = np.minimum(np.floor((x - grid.lo) / grid.h).astype(int), grid.cells_per_axis - 1)
            return vals[tuple(np.moveaxis(idx, -1, 0))]
        return cls("sampled", {"grid": grid, "values": vals}, float(vals.min()),
                   float(vals.max()), f, r_infinity=r_infinity, n=grid.n)

    # ---- derived exponents -------------------------------------------
    def _derive(self, fn, lo, hi, r_inf, name) -> "VariableExponent":
        return VariableExponent("derived", {"op": name, "base": self}, lo, hi, fn, r_inf, self.n)

    def scaled(self, r: float) -> "VariableExponent":
        """r * p(.) for r > 0."""
        if r <= 0:
            raise ValidationError("scale factor must be positive")
        ri = None if self.r_infinity is None else r * self.r_infinity
        return self._derive(lambda x: r * self.func(x), r * self.p_minus, r * self.p_plus, ri,
                            f"scale({r})")

    def divide(self, other: "VariableExponent") -> "VariableExponent":
        """p(.)/q(.) for positive exponents."""
        if other.p_minus <= 0 or self.p_minus <= 0:
            raise ValidationError("division needs positive exponents")
        ri = (None if self.r_infinity is None or other.r_infinity is None
              else self.r_infinity / other.r_infinity)
        return self._derive(lambda x: self.func(x) / other.func(x),
                            self.p_minus / other.p_plus, self.p_plus / other.p_minus, ri, "divide")

    def reciprocal(self) -> "VariableExponent":
        if self.p_minus <= 0:
            raise ValidationError("reciprocal needs a positive exponent")
        ri = None if self.r_infinity is None else 1.0 / self.r_infinity
        return self._derive(lambda x: 1.0 / self.func(x), 1.0 / self.p_plus, 1.0 / self.p_minus,
                            ri, "reciprocal")

    def minus_reciprocal_of(self, p: "VariableExponent") -> "VariableExponent":
        """s(.) - 1/p(.)."""
        ri = (None if self.r_infinity is None or p.r_infinity is None
              else self.r_infinity - 1.0 / p.r_infinity)
        return self._derive(lambda x: self.func(x) - 1.0 / p.func(x),
                            self.p_minus - 1.0 / p.p_minus, self.p_plus - 1.0 / p.p_plus, ri,
                            "minus_reciprocal")


def conjugate(p: VariableExponent) -> VariableExponent:
    """p'(.) with 1/p + 1/p' = 1."""
    if p.p_minus <= 1:
        raise ValidationError("conjugate undefined (would be infinite): p_minus <= 1")

    def conj(a):
        return a / (a - 1.0)
    ri = None if p.r_infinity is None else conj(p.r_infinity)
    return p._derive(lambda x: conj(p.func(x)), conj(p.p_plus), conj(p.p_minus), ri, "conjugate")


def harmonic_mean_exponent(p: VariableExponent, grid: Grid, E=None) -> float:
    """p_E with 1/p_E equal to the cell average of 1/p over the cell set E."""
    vals = p.on(grid)
    if E is None:
        mask = np.ones(grid.shape, bool)
    elif isinstance(E, np.ndarray):
        mask = E.astype(bool)
    else:
        mask = grid.cube_mask(E)
    if not mask.any():
        raise ValidationError("harmonic mean over an empty set")
    return float(1.0 / np.mean(1.0 / vals[mask]))


@dataclass(frozen=True)
class LogHolderEstimate:
    c0: float
    cinf: float | None
    clog: float

    def __iter__(self):
        return iter((self.c0, self.cinf, self.clog))


def _box_of(r: VariableExponent, box):
    if box is not None:
        return box
    g = r.params.get("grid") if r.family == "sampled" else None
    if g is not None:
        return (g.lo, g.lo + g.side)
    return (-4.0, 4.0)


def sample_pairs(n: int, pair_count: int, seed: int, box=(-4.0, 4.0)):
    """Deterministic Sobol point pairs (x, y) in the box.

    The first ``N`` pairs are the same for every ``pair_count >= N`` so maxima
    over them are monotone in ``pair_count``.  Separations are log-uniform in
    [1e-6, 1] times the box side.
    """
    lo, hi = float(box[0]), float(box[1])
    eng = qmc.Sobol(d=2 * n + 1, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random(pair_count)
    x = lo + (hi - lo) * u[:, :n]
    v = 2.0 * u[:, n: 2 * n] - 1.0
    nv = _norm_last(v)
    v = np.where(nv[:, None] > 0, v / np.where(nv > 0, nv, 1.0)[:, None], np.eye(n)[0])
    rad = (hi - lo) * 10.0 ** (-6.0 + 6.0 * u[:, 2 * n])
    # keep y inside the box by reflecting the direction when needed
    y = x + rad[:, None] * v
    out = (y < lo) | (y >= hi)
    y = np.where(out, x - rad[:, None] * v, y)
    y = np.clip(y, lo, np.nextafter(hi, lo))
    return x, y


def log_holder_constants(r: VariableExponent, pair_count: int, seed: int = 0, box=None,
                         n: int | None = None, with_infinity: bool = True) -> LogHolderEstimate:
    """Sampled lower bounds (C0, Cinf, Clog) of the log-Hoelder constants of r."""
    if pair_count < 1:
        raise ValidationError("pair_count must be positive")
    if with_infinity and r.r_infinity is None:
        raise ValidationError("no limit value r_infinity: cannot estimate Cinf")
    n = n or r.n or 1
    x, y = sample_pairs(n, pair_count, seed, _box_of(r, box))
    rx, ry = r(x), r(y)
    d = _norm_last(x - y)
    dr = np.abs(rx - ry)
    pos = d > 0
    c0_terms = np.where(pos & (d < 0.5), dr * np.log(1.0 / np.where(pos, d, 1.0)), 0.0)
    clog_terms = np.where(pos, dr * np.log(math.e + 1.0 / np.where(pos, d, 1.0)), 0.0)
    c0 = float(c0_terms.max(initial=0.0))
    clog = float(clog_terms.max(initial=0.0))
    cinf = None
    if with_infinity:
        cinf = float(np.max(np.abs(rx - r.r_infinity) * np.log(math.e + _norm_last(x))))
    return LogHolderEstimate(c0, cinf, clog)


def two_js_constant(n: int) -> float:
    """c_n with 2^{j|p(x)-p(y)|} <= 2^{Clog c_n} for x, y in one level-j cube.

    |x-y| <= sqrt(n) 2^{-j}, so j|p(x)-p(y)| <= Clog j / log(e + 2^j/sqrt(n));
    the supremum of that quotient over j >= 1 is computed numerically.
    """
    j = np.arange(1, 200, dtype=float)
    return float(np.max(j / np.log(math.e + 2.0**j / math.sqrt(n))))
