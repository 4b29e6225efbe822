"""Besov sequence norms b, b(W), b(A) and the maximal sequence t*."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

from .errors import ValidationError
from .exponents import VariableExponent
from .grid import CoefficientSequence, Grid, cubes_per_axis
from .varleb import DEFAULT_TOL, NormResult, mixed_norm_arrays
from .weights import MatrixWeight, ReducingFamily


@dataclass(frozen=True, eq=False)
class BesovSeqParams:
    """Exponent triple (p, q, s) with the level cut-off and value dimension.

    The norms are evaluated on a mesh of level ``j_max + mesh_extra``.
    """

    p: VariableExponent
    q: VariableExponent
    s: VariableExponent
    j_max: int
    m: int = 1
    mesh_extra: int = 1

    def __post_init__(self):
        for name in ("p", "q"):
            e = getattr(self, name)
            if e.p_minus <= 0 or not np.isfinite(e.p_plus):
                raise ValidationError(f"{name} must be positive and bounded")
        if self.j_max < 0:
            raise ValidationError("j_max must be >= 0")

    def grid_for(self, t: CoefficientSequence) -> Grid:
        return Grid(t.n, t.box_exp, max(self.j_max, t.j_max) + self.mesh_extra)


def _check_seq(t: CoefficientSequence, params: BesovSeqParams, grid: Grid):
    if t.n != grid.n or t.box_exp != grid.box_exp:
        raise ValidationError("sequence and mesh use different base boxes")
    if t.j_max > grid.level:
        raise ValidationError("mesh is coarser than the finest sequence level")


def _finish(levels_abs: list[np.ndarray], params: BesovSeqParams, grid: Grid, tol) -> NormResult:
    """Mixed norm of the per-level fields 2^{j s(x)} * levels_abs[j](x)."""
    sv = params.s.on(grid).reshape(-1)
    rows = np.stack([a.reshape(-1) * 2.0 ** (j * sv) for j, a in enumerate(levels_abs)])
    pv = params.p.on(grid).reshape(-1)
    qv = params.q.on(grid).reshape(-1)
    return mixed_norm_arrays(rows, pv, qv, grid.cell_volume, tol)


def _cube_scale(j: int, n: int) -> float:
    return 2.0 ** (j * n / 2)


def besov_seq_norm_unweighted(t: CoefficientSequence, params: BesovSeqParams, grid: Grid = None,
                              tol: float = DEFAULT_TOL) -> NormResult:
    """||t||_b using |t_Q| (the Euclidean length for m > 1)."""
    grid = grid or params.grid_for(t)
    _check_seq(t, params, grid)
    lv = [grid.expand_level(np.linalg.norm(a, axis=-1), j) * _cube_scale(j, t.n)
          for j, a in enumerate(t.levels)]
    return _finish(lv, params, grid, tol)


def besov_seq_norm_W(t: CoefficientSequence, W: MatrixWeight, params: BesovSeqParams,
                     tol: float = DEFAULT_TOL) -> NormResult:
    """||t||_{b(W)}: per level the field 2^{j s(x)} |W(x) t_j(x)|."""
    grid = W.grid
    _check_seq(t, params, grid)
    if W.m != t.m:
        raise ValidationError("weight and sequence dimensions differ")
    lv = []
    for j, a in enumerate(t.levels):
        tj = grid.expand_level(a, j) * _cube_scale(j, t.n)
        lv.append(np.linalg.norm(np.einsum("...ij,...j->...i", W.values, tj), axis=-1))
    return _finish(lv, params, grid, tol)


def besov_seq_norm_A(t: CoefficientSequence, fam: ReducingFamily, params: BesovSeqParams,
                     grid: Grid = None, tol: float = DEFAULT_TOL) -> NormResult:
    """||t||_{b(A)}: per level the field 2^{j s(x)} |A_j(x) t_j(x)|."""
    grid = grid or params.grid_for(t)
    _check_seq(t, params, grid)
    if fam.m != t.m or fam.n != t.n or fam.box_exp != t.box_exp:
        raise ValidationError("reducing family does not match the sequence")
    if fam.j_max < t.j_max:
        raise ValidationError("reducing family stops before the finest sequence level")
    lv = []
    for j, a in enumerate(t.levels):
        v = np.linalg.norm(np.einsum("...ij,...j->...i", fam.levels[j], a), axis=-1)
        lv.append(grid.expand_level(v, j) * _cube_scale(j, t.n))
    return _finish(lv, params, grid, tol)


def tstar(t: CoefficientSequence, r: float, lam: float) -> CoefficientSequence:
    """(t*)_Q = [sum over same-level R of |t_R|^r (1 + |x_R - x_Q|/l(R))^{-lam}]^{1/r}."""
    if not (0 < r < np.inf):
        raise ValidationError("r must be positive and finite")
    out = []
    for j, a in enumerate(t.levels):
        mag = np.linalg.norm(a, axis=-1) ** r
        c = cubes_per_axis(t.box_exp, j)
        d = np.arange(-(c - 1), c, dtype=float)
        dist = np.sqrt(sum(np.meshgrid(*([d * d] * t.n), indexing="ij"))) if t.n > 1 \
            else np.abs(d)
        K = (1.0 + dist) ** (-lam)
        full = convolve(mag, K, mode="full", method="direct")
        sl = tuple(slice(c - 1, 2 * c - 1) for _ in range(t.n))
        out.append(np.maximum(full[sl], 0.0)[..., None] ** (1.0 / r))
    return CoefficientSequence(t.n, t.box_exp, 1, tuple(out))


def random_sequence(n: int, box_exp, m: int, j_max: int, seed: int, trial: int = 0,
                    decay: float = 0.0, density: float = 1.0,
                    complex_values: bool = False) -> CoefficientSequence:
    """Seeded Gaussian sequence with level-j entries scaled by 2^{-j decay}.

    Each level draws from its own stream keyed by (seed, trial, j), so the
    levels shared by two cut-offs are identical.
    """
    lv = []
    for j in range(j_max + 1):
        rng = np.random.default_rng([seed, trial, j])
        shape = (cubes_per_axis(box_exp, j),) * n + (m,)
        a = rng.standard_normal(shape)
        if complex_values:
            a = a + 1j * rng.standard_normal(shape)
        if density < 1.0:
            a = a * (rng.random(shape[:-1]) < density)[..., None]
        lv.append(a * 2.0 ** (-j * decay))
    return CoefficientSequence(n, box_exp, m, tuple(lv))
