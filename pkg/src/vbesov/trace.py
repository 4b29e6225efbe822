"""Coefficient-level trace onto x_n = 0 and extension back, for n = 2 tensor wavelets.

Cubes are Q(I, k) = I x [l(I) k, l(I)(k + 1)).  Coefficients live on the
finite lattice of the base box, which must straddle the hyperplane (a box
[-2^J, 2^J)^n); slabs Q(I, k) outside the box hold no coefficients.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .almostdiag import ConditionReport, Inequality
from .errors import ValidationError
from .exponents import VariableExponent
from .grid import CoefficientSequence, DyadicCube, Grid, cubes_per_axis, k_offset
from .seqspaces import BesovSeqParams
from .wavelets import CascadeValues, WaveletCoeffSet, WaveletFilter, cascade_values, \
    wavelet_besov_norm
from .weights import MatrixWeight, direction_norms, reducing_operator, spectral_norm, \
    sphere_directions

ANCHOR_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class TraceGeometry:
    """Integer samples phi(-k), psi(-k) for |k| <= N and the extension anchor k0."""

    n: int
    filter: WaveletFilter
    N: int
    k0: int
    phi_at: dict      # k -> phi(-k)
    psi_at: dict      # k -> psi(-k)

    @classmethod
    def build(cls, filt: WaveletFilter, n: int = 2, cascade: CascadeValues | None = None,
              k0: int | None = None) -> "TraceGeometry":
        if n != 2:
            raise ValidationError("trace and extension are provided for n = 2")
        cascade = cascade or cascade_values(filt, 0)
        S = filt.length - 1
        step = 2**cascade.depth
        ints_phi = cascade.phi[::step]
        ints_psi = cascade.psi[::step]
        if len(ints_phi) != S + 1:
            raise ValidationError("cascade values do not cover the integer points of the support")
        # supp theta within [0, S]^n, inside the ball of radius S sqrt(n)
        N = int(math.ceil(S * math.sqrt(n)))
        phi_at, psi_at = {}, {}
        for k in range(-N, N + 1):
            x = -k
            phi_at[k] = float(ints_phi[x]) if 0 <= x <= S else 0.0
            psi_at[k] = float(ints_psi[x]) if 0 <= x <= S else 0.0
        k0 = cascade.k0 if k0 is None else k0
        if abs(phi_at.get(k0, 0.0)) < ANCHOR_MIN:
            raise ValidationError(f"anchor k0 = {k0} is invalid: |phi(-k0)| < {ANCHOR_MIN}")
        return cls(n, filt, N, k0, phi_at, psi_at)

    def Q(self, I: DyadicCube, k: int) -> DyadicCube:
        return DyadicCube(I.j, tuple(I.k) + (k,))


def _slab_pos(box_exp, j: int, k: int) -> int | None:
    """Array position of slab k at level j, or None when the slab leaves the box."""
    pos = k - k_offset(box_exp, j)
    return pos if 0 <= pos < cubes_per_axis(box_exp, j) else None


def _check_set(u: WaveletCoeffSet, geom: TraceGeometry):
    if u.n != geom.n:
        raise ValidationError(f"expected coefficients on R^{geom.n}")
    if u.filter.name != geom.filter.name:
        raise ValidationError("coefficients and cascade values use different filters")


def trace_coeffs(u: WaveletCoeffSet, geom: TraceGeometry) -> WaveletCoeffSet:
    """Coefficients of Tr f: at (lam', I), sum over lam_n and |k| <= N of
    l(Q)^{-1/2} phi^(lam_n)(-k) u^(lam', lam_n)_{Q(I, k)}.

    The lam' = 0 output may be nonzero above the coarsest level; idwt accepts it.
    """
    _check_set(u, geom)
    box = u.grid.box_exp
    if box is None:
        raise ValidationError("the trace needs a base box [-2^J, 2^J)^n around the hyperplane")
    J = max(s.j_max for s in u.seqs.values())
    m = u.m
    dt = np.result_type(*[s.levels[0] for s in u.seqs.values()])
    out = {lp: [np.zeros((cubes_per_axis(box, j), m), dt) for j in range(J + 1)]
           for lp in ((0,), (1,))}
    for lam, seq in u.seqs.items():
        lp, ln = lam[:-1], lam[-1]
        samples = geom.psi_at if ln else geom.phi_at
        for j, a in enumerate(seq.levels):
            if not np.any(a):
                continue
            scale = 2.0 ** (j / 2)          # l(Q)^{-1/2}
            acc = out[lp][j]
            for k in range(-geom.N, geom.N + 1):
                v = samples[k]
                pos = _slab_pos(box, j, k)
                if v == 0.0 or pos is None:
                    continue
                acc += scale * v * a[:, pos]
    g1 = Grid(1, box, u.grid.level)
    seqs = {lp: CoefficientSequence(1, box, m, tuple(lv)) for lp, lv in out.items()}
    return WaveletCoeffSet(u.filter, g1, u.j0, seqs)


def extend_coeffs(v: WaveletCoeffSet, geom: TraceGeometry) -> WaveletCoeffSet:
    """(lam', I) -> l(I)^{1/2} v / phi(-k0) at ((lam', 0), Q(I, k0)); every other output is 0."""
    if v.n != geom.n - 1:
        raise ValidationError(f"expected coefficients on R^{geom.n - 1}")
    if v.filter.name != geom.filter.name:
        raise ValidationError("coefficients and geometry use different filters")
    a0 = geom.phi_at[geom.k0]
    box = v.grid.box_exp
    if box is None or _slab_pos(box, 0, geom.k0) is None:
        raise ValidationError("the anchor slab k0 lies outside the base box")
    m = v.m
    seqs = {}
    J = max(s.j_max for s in v.seqs.values())
    for lp, seq in v.seqs.items():
        for ln in (0, 1):
            lv = []
            for j in range(J + 1):
                c = cubes_per_axis(box, j)
                arr = np.zeros((c, c, m), seq.levels[0].dtype)
                if ln == 0 and j <= seq.j_max:
                    arr[:, _slab_pos(box, j, geom.k0)] = 2.0 ** (-j / 2) * seq.levels[j] / a0
                lv.append(arr)
            seqs[lp + (ln,)] = CoefficientSequence(2, box, m, tuple(lv))
    return WaveletCoeffSet(v.filter, Grid(2, box, v.grid.level), v.j0, seqs)


# ---------------------------------------------------------------- gates and compatibility
def restrict_to_hyperplane(e: VariableExponent) -> VariableExponent:
    """x' -> e(x', 0), for exponents declared independent of x_n."""
    def f(x):
        z = np.zeros(x.shape[:-1] + (1,))
        return e.func(np.concatenate([x, z], axis=-1))
    ri = e.r_infinity
    return VariableExponent("derived", {"op": "restrict", "base": e}, e.p_minus, e.p_plus, f,
                            ri, None if e.n is None else e.n - 1)


def slab_consistency(exponents: dict, grid: Grid, tol: float = 1e-12) -> dict:
    """Largest variation along x_n of each exponent on the mesh; raises if any exceeds tol."""
    out = {}
    for name, e in exponents.items():
        v = e.on(grid)
        out[name] = float(np.max(np.ptp(v, axis=-1)))
        if out[name] > tol:
            raise ValidationError(f"exponent {name} depends on x_n (variation {out[name]:.3e})")
    return out


def s_constraint(s: VariableExponent, p: VariableExponent, grid: Grid,
                 d_upper_V: float) -> ConditionReport:
    """(s - 1/p)_- > d_upper(V) + (n - 1)(1/p_- - 1)^(+), with the infimum over mesh cells."""
    lhs = float(np.min(s.on(grid) - 1.0 / p.on(grid)))
    n = grid.n
    rhs = d_upper_V + (n - 1) * max(1.0 / p.p_minus - 1.0, 0.0)
    return ConditionReport((Inequality("(s - 1/p)_- > d_upper(V) + (n-1)(1/p_- - 1)^(+)",
                                       lhs, ">", rhs),))


@dataclass(frozen=True)
class CompatibilityResult:
    c_forward: float
    c_backward: float
    table: list    # rows (I, k, ratio)
    delta: float


def trace_compatibility(W: MatrixWeight, V: MatrixWeight, p: VariableExponent, I_set,
                        dir_count: int = 64, seed: int = 0, k_max: int = 8,
                        delta: float = 0.0, method: str = "auto") -> CompatibilityResult:
    """Sampled constants of the W/V compatibility condition and the per-k reducing-operator table.

    The per-k entry is ||A_{I,V} A_{Q(I,k),W}^{-1}|| / (1 + |k|)^delta, which is the
    supremum over all directions z of the ratio.
    """
    if W.m != V.m:
        raise ValidationError("W and V must share m")
    if W.grid.n != 2 or V.grid.n != 1:
        raise ValidationError("W lives on R^2 and V on R^1")
    pV = restrict_to_hyperplane(p)
    Z = sphere_directions(W.m, dir_count, seed)
    fwd = bwd = 0.0
    table = []
    for I in I_set:
        Q0 = DyadicCube(I.j, tuple(I.k) + (0,))
        nv = direction_norms(V, pV, I, Z)
        nw = direction_norms(W, p, Q0, Z)
        fwd = max(fwd, float(np.max(nv / nw)))
        bwd = max(bwd, float(np.max(nw / nv)))
        AI = reducing_operator(V, pV, I, method)
        c = cubes_per_axis(W.grid.box_exp, I.j)
        lo = k_offset(W.grid.box_exp, I.j)
        for k in range(-k_max, k_max + 1):
            if not lo <= k < lo + c:
                continue
            AQ = reducing_operator(W, p, DyadicCube(I.j, tuple(I.k) + (k,)), method)
            r = float(spectral_norm(AI @ np.linalg.inv(AQ))) / (1.0 + abs(k)) ** delta
            table.append((I, k, r))
    return CompatibilityResult(fwd, bwd, table, delta)


def random_coeff_set(filt: WaveletFilter, grid: Grid, j_max: int, m: int, seed: int,
                     trial: int = 0, decay: float = 0.0) -> WaveletCoeffSet:
    """Seeded coefficients at levels 0..j_max; level j entries scaled by 2^{-j decay}.

    Each (lam, j) block has its own stream, so draws are nested in j_max.
    """
    n = grid.n
    seqs = {}
    for li, lam in enumerate(itertools.product((0, 1), repeat=n)):
        top = 0 if not any(lam) else j_max
        lv = []
        for j in range(top + 1):
            rng = np.random.default_rng([seed, trial, li, j])
            shape = (cubes_per_axis(grid.box_exp, j),) * n + (m,)
            lv.append(rng.standard_normal(shape) * 2.0 ** (-j * decay))
        seqs[lam] = CoefficientSequence(n, grid.box_exp, m, tuple(lv))
    return WaveletCoeffSet(filt, grid, 0, seqs)


@dataclass(frozen=True)
class TraceRatioStats:
    ratios: np.ndarray
    max: float
    median: float


def trace_norm_ratio(W: MatrixWeight, V: MatrixWeight, params_W: BesovSeqParams,
                     params_V: BesovSeqParams, geom: TraceGeometry, j_max: int, trials: int,
                     seed: int, decay: float | None = None) -> TraceRatioStats:
    """||Tr u||_{b(V)} / ||u||_{b(W)} over seeded random coefficient sets."""
    ratios = []
    if decay is None:
        decay = 0.5 * (params_W.s.p_minus + params_W.s.p_plus) + 1.0
    for t in range(trials):
        u = random_coeff_set(geom.filter, W.grid, j_max, W.m, seed, t, decay)
        den = wavelet_besov_norm(u, W, params_W).value
        num = wavelet_besov_norm(trace_coeffs(u, geom), V, params_V).value
        ratios.append(num / den)
    r = np.array(ratios)
    return TraceRatioStats(r, float(r.max()), float(np.median(r)))
