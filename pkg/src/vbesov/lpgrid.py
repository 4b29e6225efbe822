"""Littlewood-Paley analysis on a periodic mesh.

Frequencies are in radians per unit length: xi = 2 pi fftfreq(N, h).  For
trigonometric polynomials the FFT convolution below is the exact continuous
convolution on the torus, so phi_j * f, S_phi and T_psi carry no
quadrature error once the band fits under the mesh Nyquist frequency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import CoefficientSequence, Grid, GridFunction, cubes_per_axis
from .seqspaces import BesovSeqParams
from .varleb import DEFAULT_TOL, NormResult, mixed_norm_arrays
from .weights import MatrixWeight, ReducingFamily

PROFILES = ("cosine", "polynomial")
# annulus where the generating function must stay away from zero
CORE_LO, CORE_HI = 3.0 / 5.0, 5.0 / 3.0


def _eta(u: np.ndarray, profile: str) -> np.ndarray:
    """Log-scale profile supported on [-1, 1]: phi_hat(xi) = eta(log2 |xi|)."""
    inside = np.abs(u) < 1
    if profile == "cosine":
        v = np.cos(0.5 * np.pi * u) ** 2
    elif profile == "polynomial":
        v = (1.0 - u * u) ** 2
    else:
        raise ValidationError(f"unknown bump profile {profile!r}; choose from {PROFILES}")
    return np.where(inside, v, 0.0)


def phi_hat(r: np.ndarray, profile: str = "cosine") -> np.ndarray:
    """Radial generator, supported in 1/2 <= |xi| <= 2."""
    with np.errstate(divide="ignore"):
        u = np.log2(np.where(r > 0, r, 1.0))
    return np.where(r > 0, _eta(u, profile), 0.0)


def Phi_hat(r: np.ndarray, profile: str = "cosine") -> np.ndarray:
    """Low-pass generator: 1 on |xi| <= 1, follows phi_hat on 1 < |xi| <= 2."""
    return np.where(r <= 1.0, 1.0, phi_hat(r, profile))


def frequency_radius(grid: Grid) -> np.ndarray:
    xi = 2 * np.pi * np.fft.fftfreq(grid.cells_per_axis, d=grid.h)
    mesh = np.meshgrid(*([xi] * grid.n), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


def _axis_freqs(grid: Grid) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(grid.cells_per_axis, d=grid.h)


@dataclass(frozen=True, eq=False)
class AdmissiblePair:
    """Multipliers phi_hat_j and dual psi_hat_j for j = 0..j_max on one mesh.

    ``band`` is the radius (5/3) 2^j_max below which sum_j phi_hat_j psi_hat_j = 1.
    """

    grid: Grid
    j_max: int
    profile: str
    phi: tuple = field(repr=False)
    psi: tuple = field(repr=False)
    band: float
    c_lower: float

    def covered(self) -> np.ndarray:
        return frequency_radius(self.grid) <= self.band

    def partition_residual(self) -> float:
        s = sum(a * b for a, b in zip(self.phi, self.psi))
        return float(np.max(np.abs(s - 1.0)[self.covered()]))


def make_admissible_pair(G: int, j_max: int, profile: str = "cosine", n: int = 1,
                         box_exp=None) -> AdmissiblePair:
    """Pair on the mesh of level G over the base box; psi_hat_j = phi_hat_j / sum_k phi_hat_k^2."""
    grid = Grid(n, box_exp, G)
    if j_max < 0:
        raise ValidationError("j_max must be >= 0")
    nyq = np.pi / grid.h
    if 2.0 ** (j_max + 1) >= nyq:
        raise ValidationError(
            f"2^(j_max+1) = {2.0 ** (j_max + 1):g} is not below the mesh Nyquist frequency {nyq:g}")
    r = frequency_radius(grid)
    phis = [Phi_hat(r, profile)] + [phi_hat(r * 2.0**-j, profile) for j in range(1, j_max + 1)]
    band = CORE_HI * 2.0**j_max
    # smallest value on the core annulus (phi_hat) and on the core ball (Phi_hat)
    core = np.linspace(CORE_LO, CORE_HI, 4097)
    ball = np.linspace(0.0, CORE_HI, 4097)
    c = float(min(phi_hat(core, profile).min(), Phi_hat(ball, profile).min()))
    if c <= 0:
        raise ValidationError(f"profile {profile!r} vanishes on the core annulus")
    sq = sum(p * p for p in phis)
    cov = r <= band
    if np.any(sq[cov] < c * c * (1 - 1e-12)):
        raise ValidationError("the levels do not cover the declared band")
    floor = c * c
    denom = np.maximum(sq, floor)
    psis = [p / denom for p in phis]
    for a in phis + psis:
        a.setflags(write=False)
    return AdmissiblePair(grid, j_max, profile, tuple(phis), tuple(psis), band, c)


def _vector_values(f: GridFunction) -> np.ndarray:
    if f.kind == "scalar":
        return np.asarray(f.values)[..., None]
    if f.kind == "vector":
        return np.asarray(f.values)
    raise ValidationError("expected a scalar or vector grid function")


def _check_grid(f: GridFunction, pair: AdmissiblePair):
    if f.grid != pair.grid:
        raise ValidationError("function and admissible pair live on different meshes")


def _fft(v: np.ndarray, n: int) -> np.ndarray:
    return np.fft.fftn(v, axes=tuple(range(n)))


def _ifft(v: np.ndarray, n: int, real: bool) -> np.ndarray:
    out = np.fft.ifftn(v, axes=tuple(range(n)))
    return out.real if real else out


def _convolve_values(v: np.ndarray, mult: np.ndarray, grid: Grid, shift: float = 0.0):
    """phi * v on the torus, sampled at cell centers moved by ``shift`` cells along every axis."""
    F = _fft(v, grid.n) * mult[..., None]
    if shift:
        F = F * _phase(grid, shift)[..., None]
    return _ifft(F, grid.n, not np.iscomplexobj(v))


def _phase(grid: Grid, shift: float) -> np.ndarray:
    """Multiplier of the translation g(x) -> g(x + shift h) in every coordinate."""
    e = np.exp(1j * _axis_freqs(grid) * shift * grid.h)
    out = np.ones(grid.shape, complex)
    for ax in range(grid.n):
        sh = [1] * grid.n
        sh[ax] = -1
        out = out * e.reshape(sh)
    return out


def lp_convolve(f: GridFunction, pair: AdmissiblePair, j: int) -> GridFunction:
    """phi_j * f (Phi * f for j = 0)."""
    _check_grid(f, pair)
    if not 0 <= j <= pair.j_max:
        raise ValidationError(f"level {j} outside 0..{pair.j_max}")
    out = _convolve_values(np.asarray(f.values)[..., None], pair.phi[j], pair.grid)[..., 0] \
        if f.kind == "scalar" else _convolve_values(np.asarray(f.values), pair.phi[j], pair.grid)
    return GridFunction(pair.grid, out, f.kind)


def _sample_layout(grid: Grid, j: int):
    """Cell stride between level-j cube centers, the first cell index, and the sub-cell offset."""
    if j > grid.level:
        raise ValidationError(f"level {j} is finer than the mesh")
    stride = 2 ** (grid.level - j)
    pos = 0.5 * stride - 0.5          # x_Q of the first cube, in cell-center units
    first = int(math.floor(pos))
    return stride, first, pos - first


def phi_transform(f: GridFunction, pair: AdmissiblePair) -> CoefficientSequence:
    """(S_phi f)_Q = |Q|^{1/2} (phi~_j * f)(x_Q) with x_Q the cube center.

    The samples at x_Q are exact: the convolution is evaluated on the mesh
    shifted by a half cell through a Fourier phase, instead of being read at
    the nearest node.
    """
    _check_grid(f, pair)
    grid = pair.grid
    v = _vector_values(f)
    levels = []
    for j in range(pair.j_max + 1):
        stride, first, frac = _sample_layout(grid, j)
        # phi~_hat(xi) = phi_hat(-xi) = phi_hat(xi) for the radial generators
        g = _convolve_values(v, pair.phi[j], grid, frac)
        sl = tuple(slice(first, None, stride) for _ in range(grid.n))
        c = cubes_per_axis(grid.box_exp, j)
        vals = g[sl]
        assert vals.shape[: grid.n] == (c,) * grid.n
        levels.append(2.0 ** (-j * grid.n / 2) * vals)
    return CoefficientSequence(grid.n, grid.box_exp, v.shape[-1], tuple(levels))


def inverse_phi_transform(t: CoefficientSequence, pair: AdmissiblePair,
                          kind: str | None = None) -> GridFunction:
    """T_psi t = sum_Q t_Q |Q|^{1/2} psi_j(. - x_Q)."""
    grid = pair.grid
    if t.n != grid.n or t.box_exp != grid.box_exp:
        raise ValidationError("sequence and admissible pair use different base boxes")
    if t.j_max > pair.j_max:
        raise ValidationError("sequence has levels beyond the admissible pair")
    dt = complex if t.is_complex else float
    acc = np.zeros(grid.shape + (t.m,), complex)
    for j, a in enumerate(t.levels):
        if not np.any(a):
            continue
        stride, first, frac = _sample_layout(grid, j)
        imp = np.zeros(grid.shape + (t.m,), dt)
        sl = tuple(slice(first, None, stride) for _ in range(grid.n))
        imp[sl] = a * 2.0 ** (-j * grid.n / 2) / grid.cell_volume
        # impulses sit frac cells left of x_Q: move them right by frac
        F = _fft(imp, grid.n) * (pair.psi[j] * _phase(grid, -frac))[..., None]
        acc += np.fft.ifftn(F, axes=tuple(range(grid.n)))
    out = acc if t.is_complex else acc.real
    kind = kind or ("scalar" if t.m == 1 else "vector")
    return GridFunction(grid, out[..., 0] if kind == "scalar" else out, kind)


def _level_fields(f: GridFunction, pair: AdmissiblePair) -> list[np.ndarray]:
    _check_grid(f, pair)
    v = _vector_values(f)
    return [_convolve_values(v, pair.phi[j], pair.grid) for j in range(pair.j_max + 1)]


def besov_function_norm(f: GridFunction, weight, pair: AdmissiblePair, params: BesovSeqParams,
                        tol: float = DEFAULT_TOL) -> NormResult:
    """Mixed norm of the fields 2^{j s(x)} |W(x) (phi_j * f)(x)| (A_j in place of W for a family).

    ``weight=None`` means W = I.  Levels run to min(params.j_max, pair.j_max).
    """
    grid = pair.grid
    fields = _level_fields(f, pair)
    J = min(params.j_max, pair.j_max)
    mags = []
    for j in range(J + 1):
        g = fields[j]
        if weight is None:
            w = g
        elif isinstance(weight, MatrixWeight):
            if weight.grid != grid:
                raise ValidationError("weight and pair live on different meshes")
            w = np.einsum("...ij,...j->...i", weight.values, g)
        elif isinstance(weight, ReducingFamily):
            if weight.j_max < j:
                raise ValidationError("reducing family stops before the finest level")
            Aj = grid.expand_level(weight.levels[j], j)
            w = np.einsum("...ij,...j->...i", Aj, g)
        else:
            raise ValidationError("weight must be None, a MatrixWeight or a ReducingFamily")
        mags.append(np.linalg.norm(w, axis=-1))
    sv = params.s.on(grid).reshape(-1)
    rows = np.stack([m.reshape(-1) * 2.0 ** (j * sv) for j, m in enumerate(mags)])
    return mixed_norm_arrays(rows, params.p.on(grid).reshape(-1), params.q.on(grid).reshape(-1),
                             grid.cell_volume, tol)


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    sequence: CoefficientSequence
    nodes_per_cube: int


def envelope_functional(f: GridFunction, fam: ReducingFamily, pair: AdmissiblePair,
                        mode: str = "sup", N: int = 0) -> EnvelopeResult:
    """Grid versions of the sup and inf envelope sequences.

    sup: |Q|^{1/2} max over the cells of Q of |A_Q (phi_j * f)|.
    inf: |Q|^{1/2} max over subcubes Q~ of level j + N inside Q of the min
    over the cells of Q~ of |A_Q~ (phi_j * f)|.
    """
    grid = pair.grid
    if mode not in ("sup", "inf"):
        raise ValidationError("mode must be 'sup' or 'inf'")
    if mode == "inf" and N < 1:
        raise ValidationError("inf mode needs N >= 1")
    if fam.n != grid.n or fam.box_exp != grid.box_exp:
        raise ValidationError("reducing family and pair use different base boxes")
    fields = _level_fields(f, pair)
    J = min(pair.j_max, fam.j_max)
    levels = []
    nodes = 0
    for j in range(J + 1):
        g = fields[j]
        if mode == "sup":
            Aj = grid.expand_level(fam.levels[j], j)
            mag = np.linalg.norm(np.einsum("...ij,...j->...i", Aj, g), axis=-1)
            blk = grid.blocks(mag, j)
            vals = blk.max(axis=1)
            nodes = blk.shape[1]
        else:
            jj = j + N
            if jj > grid.level or jj > fam.j_max:
                raise ValidationError(f"level {j} + N = {jj} goes past the mesh or family depth")
            Aj = grid.expand_level(fam.levels[jj], jj)
            mag = np.linalg.norm(np.einsum("...ij,...j->...i", Aj, g), axis=-1)
            sub = grid.blocks(mag, jj).min(axis=1)
            sub = sub.reshape((cubes_per_axis(grid.box_exp, jj),) * grid.n)
            # group the level-jj minima by their level-j parent
            cg = Grid(grid.n, grid.box_exp, jj)
            vals = cg.blocks(sub, j).max(axis=1)
            nodes = 2 ** ((grid.level - jj) * grid.n)
        c = cubes_per_axis(grid.box_exp, j)
        levels.append((2.0 ** (-j * grid.n / 2) * vals).reshape((c,) * grid.n + (1,)))
    return EnvelopeResult(CoefficientSequence(grid.n, grid.box_exp, 1, tuple(levels)), nodes)
