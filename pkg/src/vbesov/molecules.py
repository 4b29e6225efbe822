"""Molecules on dyadic cubes: condition checks, smooth atoms, pairings and synthesis."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .errors import ValidationError
from .grid import CoefficientSequence, DyadicCube, Grid, GridFunction


def floor_strict(r: float) -> int:
    """max{k integer : k < r}."""
    f = math.floor(r)
    return f - 1 if f == r else f


def ceil_strict(r: float) -> int:
    """min{k integer : k > r}."""
    c = math.ceil(r)
    return c + 1 if c == r else c


@dataclass(frozen=True)
class MoleculeParams:
    K: float
    L: float
    M: float
    N: float
    n: int = 1

    def __post_init__(self):
        if self.K < 0 or self.M < 0:
            raise ValidationError("K and M must be nonnegative")

    @property
    def N_floor(self) -> int:
        return floor_strict(self.N)

    @property
    def N_frac(self) -> float:
        """N** = N - floor_strict(N), in (0, 1]."""
        return self.N - floor_strict(self.N)


def multi_indices(n: int, order: int):
    """All gamma in Z_+^n with |gamma| = order."""
    for c in itertools.combinations_with_replacement(range(n), order):
        g = [0] * n
        for i in c:
            g[i] += 1
        yield tuple(g)


def fd_derivative(values: np.ndarray, gamma: tuple, h: float) -> np.ndarray:
    """Centered finite differences (one-sided at the mesh edge), applied gamma_i times per axis."""
    out = values
    for ax, k in enumerate(gamma):
        for _ in range(k):
            out = np.gradient(out, h, axis=ax)
    return out


def fd_derivatives(values: np.ndarray, max_order: int, h: float) -> dict:
    out = {}
    for k in range(1, max_order + 1):
        for g in multi_indices(values.ndim, k):
            out[g] = fd_derivative(values, g, h)
    return out


@dataclass(frozen=True, eq=False)
class SampledMolecule:
    """A function sampled at the cell centers of a mesh, anchored at a cube Q."""

    f: GridFunction
    Q: DyadicCube
    derivs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f.kind != "scalar":
            raise ValidationError("molecules are scalar grid functions")
        if self.Q.n != self.f.grid.n:
            raise ValidationError("cube and mesh dimensions differ")
        if self.Q.side < 4 * self.f.grid.h:
            raise ValidationError("mesh too coarse: l(Q) must be at least 4 cell sides")

    @property
    def grid(self) -> Grid:
        return self.f.grid

    def with_derivatives(self, max_order: int) -> "SampledMolecule":
        d = fd_derivatives(np.asarray(self.f.values), max_order, self.grid.h)
        return SampledMolecule(self.f, self.Q, d)

    def scaled(self, c: float) -> "SampledMolecule":
        return SampledMolecule(self.f * c, self.Q, {g: c * v for g, v in self.derivs.items()})

    def derivative(self, gamma: tuple) -> np.ndarray:
        if sum(gamma) == 0:
            return np.asarray(self.f.values)
        if gamma not in self.derivs:
            raise ValidationError(f"missing derivative field of order {sum(gamma)} ({gamma})")
        return self.derivs[gamma]


def envelope(grid: Grid, Q: DyadicCube, K: float) -> np.ndarray:
    """(u_K)_Q at the cell centers."""
    r = np.linalg.norm(grid.centers() - Q.center, axis=-1) / Q.side
    return Q.volume ** -0.5 * (1.0 + r) ** (-K)


@dataclass(frozen=True)
class ConditionResult:
    name: str
    value: float
    threshold: float
    applicable: bool = True

    @property
    def ok(self) -> bool:
        return (not self.applicable) or self.value <= self.threshold


@dataclass(frozen=True)
class MoleculeReport:
    conditions: tuple
    pair_count: int

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.conditions)

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def _moment_measure(g: SampledMolecule, degree: int) -> float:
    """max over |gamma| <= degree of |int y^gamma g| / int |y^gamma g|, y = (x - x_Q)/l(Q)."""
    v = np.asarray(g.f.values)
    y = (g.grid.centers() - g.Q.center) / g.Q.side
    worst = 0.0
    for k in range(degree + 1):
        for gam in multi_indices(g.grid.n, k):
            mono = np.prod(y ** np.array(gam), axis=-1)
            den = np.sum(np.abs(mono * v))
            if den > 0:
                worst = max(worst, abs(np.sum(mono * v)) / den)
    return worst


def _holder_pairs(g: SampledMolecule, count: int, seed: int):
    """Cell index pairs (x, y) with 0 < |x - y| <= l(Q); half of the x lie in 3Q."""
    grid = g.grid
    rng = np.random.default_rng(seed)
    steps = max(1, int(round(g.Q.side / grid.h)))
    c = grid.cells_per_axis
    xs = rng.integers(0, c, size=(count, grid.n))
    qidx = np.floor((g.Q.center - grid.lo) / grid.h).astype(int)
    w = 3 * steps // 2
    xs[: count // 2] = np.clip(qidx + rng.integers(-w, w + 1, size=(count // 2, grid.n)), 0, c - 1)
    off = rng.integers(-steps, steps + 1, size=(count, grid.n))
    ok = np.linalg.norm(off, axis=1) <= steps
    ys = np.clip(xs + off, 0, c - 1)
    keep = ok & np.any(ys != xs, axis=1)
    return xs[keep], ys[keep]


def molecule_check(g: SampledMolecule, params: MoleculeParams, tol: float = 1e-6,
                   moment_tol: float = 1e-8, pair_count: int = 4096,
                   seed: int = 0) -> MoleculeReport:
    """Sampled versions of the four molecule conditions.

    (i), (iii), (iv) report the largest ratio of the left side to the right
    side and pass when it is <= 1 + tol.  (ii) reports the relative
    cancellation |int y^g m| / int |y^g m| and passes when <= moment_tol.
    In (iv) the inner sup of the envelope over |z| <= |x - y| is taken in
    closed form, since u_M is radial and decreasing.
    """
    if params.n != g.grid.n:
        raise ValidationError("molecule parameters and mesh dimensions differ")
    grid, Q = g.grid, g.Q
    l = Q.side
    v = np.asarray(g.f.values)
    uK = envelope(grid, Q, params.K)
    uM = envelope(grid, Q, params.M)
    conds = [ConditionResult("i", float(np.max(np.abs(v) / uK)), 1 + tol)]

    degree = math.floor(params.L)
    ii_app = degree >= 0 and l < 1
    conds.append(ConditionResult("ii", _moment_measure(g, degree) if ii_app else 0.0,
                                 moment_tol, ii_app))

    nf = params.N_floor
    # (iii): |gamma| < N, i.e. |gamma| <= floor_strict(N)
    worst = 0.0
    for k in range(0, nf + 1):
        for gam in multi_indices(grid.n, k):
            d = g.derivative(gam)
            worst = max(worst, float(np.max(np.abs(d) / (l ** -k * uM))))
    conds.append(ConditionResult("iii", worst, 1 + tol, nf >= 0))

    worst = 0.0
    npairs = 0
    if nf >= 0:
        xs, ys = _holder_pairs(g, pair_count, seed)
        npairs = len(xs)
        cx = grid.lo + (xs + 0.5) * grid.h
        cy = grid.lo + (ys + 0.5) * grid.h
        dxy = np.linalg.norm(cx - cy, axis=1)
        rx = np.linalg.norm(cx - Q.center, axis=1)
        sup_env = Q.volume ** -0.5 * (1.0 + np.maximum(rx - dxy, 0.0) / l) ** (-params.M)
        for gam in multi_indices(grid.n, nf):
            d = g.derivative(gam)
            diff = np.abs(d[tuple(xs.T)] - d[tuple(ys.T)])
            rhs = l ** -nf * (dxy / l) ** params.N_frac * sup_env
            worst = max(worst, float(np.max(diff / rhs)))
    conds.append(ConditionResult("iv", worst, 1 + tol, nf >= 0))
    return MoleculeReport(tuple(conds), npairs)


# ---------------------------------------------------------------- atoms
def _bump_1d(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def atom_orders(N: float) -> int:
    """Highest derivative order controlled by make_atom: enough for (iii) and for (iv) via the mean value theorem."""
    return max(math.floor(N), floor_strict(N) + 1, 0)


def make_atom(Q: DyadicCube, L: float, N: float, grid: Grid, r: float = 3.0) -> SampledMolecule:
    """Smooth (r, L, N)-atom on Q sampled on ``grid``.

    A tensor bump b supported in rQ is multiplied by q - Pq, where
    q = sum_i P_{d+1}(y_i) is a Legendre polynomial of degree d + 1 = floor(L) + 1
    in the scaled coordinates and Pq is its projection, in the b-weighted cell
    inner product, onto polynomials of degree <= d.  The cell-sum moments of
    the product then vanish exactly.  The result is rescaled so that its
    finite-difference derivatives obey |D^g a| <= |Q|^{-1/2 - |g|/n} up to
    order ``atom_orders(N)``.
    """
    if r <= 1:
        raise ValidationError("support factor r must exceed 1")
    if Q.n != grid.n:
        raise ValidationError("cube and mesh dimensions differ")
    half = 0.5 * r * Q.side
    lo_box, hi_box = grid.lo, grid.lo + grid.side
    if np.any(Q.center - half < lo_box - 1e-12) or np.any(Q.center + half > hi_box + 1e-12):
        raise ValidationError("the support rQ leaves the mesh box")
    y = (grid.centers() - Q.center) / half
    b = np.prod(_bump_1d(y), axis=-1)
    cells_across = 2 * half / grid.h
    degree = math.floor(L)
    if Q.side < 1 and degree >= 0:
        if cells_across < 2 * (degree + 2):
            raise ValidationError(
                f"support spans {cells_across:.0f} cells: too few to cancel moments up to degree {degree}")
        basis = []
        for k in range(degree + 1):
            for gam in multi_indices(grid.n, k):
                P = np.ones(grid.shape)
                for ax, e in enumerate(gam):
                    P = P * legendre.legval(y[..., ax], [0] * e + [1])
                basis.append(P.reshape(-1))
        B = np.stack(basis)
        w = b.reshape(-1)
        q = sum(legendre.legval(y[..., ax], [0] * (degree + 1) + [1])
                for ax in range(grid.n)).reshape(-1)
        G = (B * w) @ B.T
        if np.linalg.cond(G) > 1e12:
            raise ValidationError("moment system is singular: refine the mesh")
        c = np.linalg.solve(G, (B * w) @ q)
        b = b * (q - c @ B).reshape(grid.shape)
    if not np.any(b):
        raise ValidationError("atom vanishes on the mesh: refine the mesh")
    top = atom_orders(N)
    derivs = fd_derivatives(b, top, grid.h)
    scale = np.max(np.abs(b)) * Q.volume ** 0.5
    for gam, d in derivs.items():
        scale = max(scale, np.max(np.abs(d)) * Q.volume ** 0.5 * Q.side ** sum(gam))
    a = SampledMolecule(GridFunction(grid, b / scale), Q, {g: d / scale for g, d in derivs.items()})
    return a


def atom_molecule_constant(K: float, M: float, n: int, r: float = 3.0) -> float:
    """c with c * a a (K, L, M, N)-molecule for every (r, L, N)-atom a.

    On rQ, |x - x_Q| / l(Q) <= r sqrt(n) / 2, so the envelopes are at least
    (1 + r sqrt(n)/2)^{-max(K, M)} |Q|^{-1/2}.  The Hoelder condition costs a
    further max(2, sqrt(n)) through the mean value theorem.
    """
    return 1.0 / (max(2.0, math.sqrt(n)) * (1.0 + r * math.sqrt(n) / 2) ** max(K, M))


# ---------------------------------------------------------------- pairing and synthesis
def _gf(f) -> GridFunction:
    return f.f if isinstance(f, SampledMolecule) else f


def pairing(f, g) -> complex:
    """Cell sum of f * conj(g) * vol."""
    f, g = _gf(f), _gf(g)
    if f.grid != g.grid:
        raise ValidationError("pairing needs a common mesh")
    if f.kind != g.kind:
        raise ValidationError("pairing needs fields of the same kind")
    s = np.sum(np.asarray(f.values) * np.conj(np.asarray(g.values))) * f.grid.cell_volume
    return complex(s) if np.iscomplexobj(s) else float(s)


def synthesize(t: CoefficientSequence, family, grid: Grid) -> GridFunction:
    """sum_Q t_Q b_Q with b_Q = family(Q); a vector field with t.m components."""
    out = np.zeros(grid.shape + (t.m,), complex if t.is_complex else float)
    for Q, v in t.items():
        if not np.any(v):
            continue
        b = np.asarray(_gf(family(Q)).values)
        out += b[..., None] * v
    return GridFunction(grid, out, "vector")


def mgh_exponents(m: MoleculeParams, b: MoleculeParams, alpha: float = 0.1):
    """(M, G, H) of the pairing bound <m_Q, b_P> <~ b^{MGH}_{Q,P}."""
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    n = m.n
    M = min(m.K, m.M, b.K, b.M)
    G = n / 2 + max(min(b.N, ceil_strict(m.L), m.K - n - alpha), 0.0)
    H = n / 2 + max(min(m.N, ceil_strict(b.L), b.K - n - alpha), 0.0)
    return M, G, H


@dataclass(frozen=True)
class PairingTable:
    rows: list          # (Q, P, |<m_Q, b_P>|, b^{MGH}_{Q,P})
    exponents: tuple    # (M, G, H)
    c_hat: float


def _atom_fits(Q: DyadicCube, grid: Grid, r: float) -> bool:
    half = 0.5 * r * Q.side
    return bool(np.all(Q.center - half >= grid.lo - 1e-12)
                and np.all(Q.center + half <= grid.lo + grid.side + 1e-12))


def pairing_table(m: MoleculeParams, b: MoleculeParams, grid: Grid, max_level: int,
                  r: float = 3.0, alpha: float = 0.1) -> PairingTable:
    """|<m_Q, b_P>| against b^{MGH}_{Q,P} over all cube pairs of levels 0..max_level.

    m_Q and b_P are atoms scaled into (K, L, M, N)-molecules by
    atom_molecule_constant; cubes whose support rQ leaves the box are skipped.
    C_hat is the largest ratio.
    """
    from .almostdiag import AdParams, bdef_block
    M, G, H = mgh_exponents(m, b, alpha)
    cubes = [Q for j in range(max_level + 1) for Q in grid.cubes(j) if _atom_fits(Q, grid, r)]
    if not cubes:
        raise ValidationError("no cube of the requested levels fits its atom support in the box")

    def stack(p: MoleculeParams):
        c = atom_molecule_constant(p.K, p.M, grid.n, r)
        return np.stack([c * np.asarray(make_atom(Q, p.L, p.N, grid, r).f.values).reshape(-1)
                         for Q in cubes])

    gram = np.abs(stack(m) @ stack(b).T) * grid.cell_volume
    ad = AdParams(M, G, H)
    bound = np.empty_like(gram)
    for a, Q in enumerate(cubes):
        for c, P in enumerate(cubes):
            bound[a, c] = bdef_block(Q.center[None], Q.j, P.center[None], P.j, ad)[0, 0]
    ratio = gram / bound
    rows = [(Q, P, float(gram[a, c]), float(bound[a, c]))
            for a, Q in enumerate(cubes) for c, P in enumerate(cubes)]
    return PairingTable(rows, (M, G, H), float(ratio.max()))
