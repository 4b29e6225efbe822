"""Orthonormal Daubechies filter banks, periodic tensor DWT (n <= 2) and the cascade algorithm."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure, ValidationError
from .grid import CoefficientSequence, Grid, GridFunction, cubes_per_axis
from .seqspaces import BesovSeqParams, besov_seq_norm_W
from .varleb import DEFAULT_TOL, NormResult

# Scaling filters of the extremal-phase Daubechies family, normalized to sum sqrt(2).
# Values as tabulated in Daubechies' "Ten Lectures on Wavelets" (Table 6.1) to 20 digits;
# they are re-checked below against the defining identities, which are the real source of truth.
_DB = {
    "db1": [0.7071067811865475244, 0.7071067811865475244],
    "db2": [0.48296291314453414337, 0.83651630373780790558, 0.22414386804201338103,
            -0.12940952255126038117],
    "db3": [0.332670552950082616, 0.80689150931109257649, 0.4598775021184915701,
            -0.1350110200102545887, -0.085441273882026661693, 0.035226291885709536603],
    "db4": [0.23037781330889650086, 0.71484657055291564709, 0.63088076792985890788,
            -0.027983769416859854211, -0.18703481171909308408, 0.030841381835560763627,
            0.032883011666885199735, -0.010597401785069032105],
    "db5": [0.16010239797419291448, 0.60382926979718967054, 0.72430852843777292773,
            0.13842814590132073151, -0.24229488706638203186, -0.032244869584638374648,
            0.077571493840045713523, -0.0062414902127982742742, -0.012580751999081999469,
            0.003335725285473771278],
    "db6": [0.11154074335010946362, 0.49462389039845308568, 0.75113390802109535068,
            0.31525035170919762909, -0.22626469396543982008, -0.12976686756726193556,
            0.097501605587323049102, 0.027522865530305728626, -0.031582039317486029565,
            0.00055384220116149613925, 0.0047772575109455106396, -0.0010773010853084795649],
}
# Hoelder exponents of the scaling functions (Daubechies, Table 7.3); the class tag
# is the largest integer strictly below, so db1 (discontinuous) gets -1.
_HOELDER = {"db1": 0.0, "db2": 0.5500, "db3": 1.0878, "db4": 1.6179, "db5": 1.9690,
            "db6": 2.1891}


def _class_tag(alpha: float) -> int:
    f = math.floor(alpha)
    return f - 1 if f == alpha else f


@dataclass(frozen=True, eq=False)
class WaveletFilter:
    name: str
    h: np.ndarray
    regularity: int
    vanishing_moments: int

    @property
    def g(self) -> np.ndarray:
        """High-pass filter by the conjugate-quadrature flip g_k = (-1)^k h_{L-1-k}."""
        L = len(self.h)
        return np.array([(-1) ** k * self.h[L - 1 - k] for k in range(L)])

    @property
    def length(self) -> int:
        return len(self.h)

    @classmethod
    def daubechies(cls, order: int | str) -> "WaveletFilter":
        name = order if isinstance(order, str) else f"db{order}"
        if name not in _DB:
            raise ValidationError(f"unknown filter {name!r}; shipped: {sorted(_DB)}")
        h = np.array(_DB[name])
        h.setflags(write=False)
        f = cls(name, h, _class_tag(_HOELDER[name]), len(h) // 2)
        verify_filter(f)
        return f


def verify_filter(f: WaveletFilter, tol: float = 1e-14) -> None:
    """Check sum h = sqrt 2, double-shift orthonormality and the vanishing moments of g."""
    h = f.h
    if abs(h.sum() - math.sqrt(2)) > tol:
        raise NumericalFailure(f"{f.name}: filter sum {h.sum()!r} differs from sqrt(2)")
    L = len(h)
    for l in range(0, L // 2):
        s = float(np.dot(h[: L - 2 * l], h[2 * l:]))
        if abs(s - (1.0 if l == 0 else 0.0)) > tol:
            raise NumericalFailure(f"{f.name}: double-shift orthonormality fails at shift {l}")
    k = np.arange(L, dtype=float)
    g = f.g
    for p in range(f.vanishing_moments):
        scale = np.sum(np.abs(g) * (k + 1) ** p)
        if abs(np.sum(g * k**p)) > 1e3 * tol * scale:
            raise NumericalFailure(f"{f.name}: high-pass moment of order {p} does not vanish")


def shipped_filters() -> list[str]:
    return sorted(_DB)


# ---------------------------------------------------------------- periodic transform
def _analysis_1d(x: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int):
    N = x.shape[axis]
    if N % 2:
        raise ValidationError("periodic step needs an even length")
    k2 = 2 * np.arange(N // 2)
    a = sum(h[i] * np.take(x, (k2 + i) % N, axis=axis) for i in range(len(h)))
    d = sum(g[i] * np.take(x, (k2 + i) % N, axis=axis) for i in range(len(g)))
    return a, d


def _synthesis_1d(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int):
    half = a.shape[axis]
    N = 2 * half
    shape = list(a.shape)
    shape[axis] = N
    x = np.zeros(shape, np.result_type(a, d, float))
    xm = np.moveaxis(x, axis, 0)
    am, dm = np.moveaxis(a, axis, 0), np.moveaxis(d, axis, 0)
    k2 = 2 * np.arange(half)
    for i in range(len(h)):
        idx = (k2 + i) % N
        if len(np.unique(idx)) == len(idx):
            xm[idx] += h[i] * am + g[i] * dm
        else:
            np.add.at(xm, idx, h[i] * am + g[i] * dm)
    return x


def _lambdas(n: int):
    return list(itertools.product((0, 1), repeat=n))


@dataclass(frozen=True, eq=False)
class WaveletCoeffSet:
    """Coefficients <f, theta^(lam)_Q>: ``seqs[lam]`` for lam in {0,1}^n.

    Detail sequences (lam != 0) fill levels j0..J-1; the scaling sequence
    (lam = 0) is nonzero only at level j0.
    """

    filter: WaveletFilter
    grid: Grid
    j0: int
    seqs: dict

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def m(self) -> int:
        return next(iter(self.seqs.values())).m

    def energy(self) -> float:
        return float(sum(np.sum(np.abs(s.flat()) ** 2) for s in self.seqs.values()))

    def scaled(self, c: float) -> "WaveletCoeffSet":
        return WaveletCoeffSet(self.filter, self.grid, self.j0,
                               {k: v * c for k, v in self.seqs.items()})

    def detail_levels(self) -> range:
        return range(self.j0, self.grid.level)


def _check_dims(grid: Grid):
    if grid.n > 2:
        raise ValidationError("tensor wavelets are provided for n <= 2 only")


def dwt(f: GridFunction, filt: WaveletFilter, levels: int | None = None) -> WaveletCoeffSet:
    """Periodic orthonormal DWT of the samples 2^{-Gn/2} f(cell centers).

    ``levels`` decomposition steps run from the mesh level G down to j0 = G - levels
    (all the way to level 0 by default).
    """
    grid = f.grid
    _check_dims(grid)
    G = grid.level
    levels = G if levels is None else levels
    if not 0 <= levels <= G:
        raise ValidationError(f"levels must lie in 0..{G}")
    v = np.asarray(f.values)
    scalar = f.kind == "scalar"
    if scalar:
        v = v[..., None]
    elif f.kind != "vector":
        raise ValidationError("dwt expects a scalar or vector grid function")
    n, m = grid.n, v.shape[-1]
    a = v * grid.cell_volume**0.5
    j0 = G - levels
    lams = _lambdas(n)
    dt = a.dtype
    details = {lam: [None] * G for lam in lams if any(lam)}
    for j in range(G - 1, j0 - 1, -1):
        bands = {(): a}
        for ax in range(n):
            nb = {}
            for key, arr in bands.items():
                lo, hi = _analysis_1d(arr, filt.h, filt.g, ax)
                nb[key + (0,)] = lo
                nb[key + (1,)] = hi
            bands = nb
        a = bands[(0,) * n]
        for lam in details:
            details[lam][j] = bands[lam]
    seqs = {}
    for lam in lams:
        if any(lam):
            lv = tuple(details[lam][j] if j >= j0 else
                       np.zeros((cubes_per_axis(grid.box_exp, j),) * n + (m,), dt)
                       for j in range(G))
            seqs[lam] = CoefficientSequence(n, grid.box_exp, m, lv)
        else:
            lv = tuple(a if j == j0 else
                       np.zeros((cubes_per_axis(grid.box_exp, j),) * n + (m,), dt)
                       for j in range(j0 + 1))
            seqs[lam] = CoefficientSequence(n, grid.box_exp, m, lv)
    return WaveletCoeffSet(filt, grid, j0, seqs)


def idwt(coeffs: WaveletCoeffSet, kind: str | None = None) -> GridFunction:
    """Inverse of :func:`dwt`.

    Scaling coefficients above level j0 (as produced by the trace) are added
    into the running approximation at their level; detail sequences may stop
    before the mesh level.
    """
    grid, filt = coeffs.grid, coeffs.filter
    n = grid.n
    zero = (0,) * n
    scal = coeffs.seqs[zero]

    def level(lam, j):
        s = coeffs.seqs[lam]
        if j <= s.j_max:
            return s.levels[j]
        return np.zeros((cubes_per_axis(grid.box_exp, j),) * n + (coeffs.m,))

    a = scal.levels[coeffs.j0]
    for j in range(coeffs.j0, grid.level):
        if j > coeffs.j0 and j <= scal.j_max:
            a = a + scal.levels[j]
        bands = {lam: (a if not any(lam) else level(lam, j)) for lam in _lambdas(n)}
        for ax in range(n - 1, -1, -1):
            nb = {}
            for key in {k[:ax] for k in bands}:
                nb[key] = _synthesis_1d(bands[key + (0,)], bands[key + (1,)], filt.h, filt.g, ax)
            bands = nb
        a = bands[()]
    out = a / grid.cell_volume**0.5
    kind = kind or ("scalar" if coeffs.m == 1 else "vector")
    return GridFunction(grid, out[..., 0] if kind == "scalar" else out, kind)


def basis_function(filt: WaveletFilter, grid: Grid, lam: tuple, j: int, k: tuple) -> GridFunction:
    """theta^(lam)_Q on the mesh, obtained by inverting a unit coefficient (k are array positions)."""
    zero = GridFunction(grid, np.zeros(grid.shape))
    base = dwt(zero, filt, grid.level - j)
    seqs = dict(base.seqs)
    s = seqs[lam]
    lv = list(s.levels)
    arr = np.zeros_like(lv[j])
    arr[tuple(k) + (0,)] = 1.0
    lv[j] = arr
    seqs[lam] = CoefficientSequence(s.n, s.box_exp, s.m, tuple(lv))
    return idwt(WaveletCoeffSet(filt, grid, base.j0, seqs))


# ---------------------------------------------------------------- cascade
@dataclass(frozen=True, eq=False)
class CascadeValues:
    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    k0: int
    depth: int


def cascade_values(filt: WaveletFilter, depth: int) -> CascadeValues:
    """phi and psi at the points m 2^{-depth} of [0, L-1].

    Integer values are the eigenvector of the refinement matrix
    (sqrt2 h_{2i-k})_{i,k} for eigenvalue 1, normalized to sum 1; finer dyadic
    points follow from the two-scale relation.
    """
    if depth < 0:
        raise ValidationError("depth must be >= 0")
    h = np.asarray(filt.h) * math.sqrt(2)
    L = len(h)
    S = L - 1
    if S == 0:
        raise ValidationError("filter too short")
    T = np.zeros((S + 1, S + 1))
    for i in range(S + 1):
        for k in range(S + 1):
            if 0 <= 2 * i - k < L:
                T[i, k] = h[2 * i - k]
    w, V = np.linalg.eig(T)
    idx = int(np.argmin(np.abs(w - 1.0)))
    if abs(w[idx] - 1.0) > 1e-10:
        raise NumericalFailure("refinement matrix has no eigenvalue 1")
    v = np.real(V[:, idx])
    if abs(v.sum()) < 1e-14:
        raise NumericalFailure("eigenvector cannot be normalized to sum 1")
    phi = v / v.sum()
    # Haar: the right-continuous indicator has phi(0) = 1, phi(1) = 0
    if L == 2:
        phi = np.array([1.0, 0.0])
    for d in range(depth):
        phi = _refine_once(phi, h, S, d)
    npts = S * 2**depth + 1
    x = np.arange(npts) / 2**depth
    g = np.asarray(filt.g) * math.sqrt(2)
    # psi(x) = sum_k g_k phi(2x - k); for x = i 2^{-depth}, 2x - k sits at index 2i - k 2^depth
    psi = np.zeros(npts)
    i = np.arange(npts)
    for k in range(L):
        p = 2 * i - k * 2**depth
        ok = (p >= 0) & (p < npts)
        psi[ok] += g[k] * phi[p[ok]]
    ints = phi[:: 2**depth]
    k0 = -int(np.argmax(np.abs(ints)))
    return CascadeValues(x, phi, psi, k0, depth)


def _refine_once(phi: np.ndarray, h: np.ndarray, S: int, depth: int) -> np.ndarray:
    """Values on the grid 2^{-(depth+1)} from those on 2^{-depth}; h is scaled by sqrt 2."""
    d = depth + 1
    npts = S * 2**d + 1
    new = np.zeros(npts)
    new[::2] = phi
    for mm in range(1, npts, 2):
        acc = 0.0
        for k in range(len(h)):
            p = mm - k * 2 ** (d - 1)
            if 0 <= p <= S * 2 ** (d - 1):
                acc += h[k] * phi[p]
        new[mm] = acc
    return new


def wavelet_besov_norm(coeffs: WaveletCoeffSet, W, params: BesovSeqParams,
                       tol: float = DEFAULT_TOL) -> NormResult:
    """Sum over lam of the b(W) norms of the per-lam sequences (scaling part included)."""
    total = 0.0
    iters = 0
    resid = 0.0
    for lam, s in coeffs.seqs.items():
        r = besov_seq_norm_W(s, W, params, tol)
        total += r.value
        iters += r.iterations
        resid = max(resid, r.residual)
    return NormResult(total, iters, resid)
