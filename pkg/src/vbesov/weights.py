"""Matrix weights, the A_{p,inf} characteristic, reducing operators, dimensions."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import norm as _gauss
from scipy.stats import qmc

from .errors import NumericalFailure, NumericalWarning, ValidationError
from .exponents import VariableExponent
from .grid import Cube, DyadicCube, Grid, GridFunction, cubes_per_axis, k_offset, Lattice
from .varleb import DEFAULT_TOL, solve_log_norms, solve_norms

METHODS = ("exact-scalar", "exact-diagonal", "john")
DEFAULT_CAP = 1e8
_CHUNK = 2_000_000


# ---------------------------------------------------------------- linear algebra
def spectral_norm(M: np.ndarray) -> np.ndarray:
    """Largest singular value over the last two axes (closed form for m <= 2)."""
    M = np.asarray(M)
    m = M.shape[-1]
    if m == 1:
        return np.abs(M[..., 0, 0])
    if m == 2:
        fro = np.sum(np.abs(M) ** 2, axis=(-2, -1))
        det = np.abs(M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]) ** 2
        disc = np.sqrt(np.maximum(fro * fro - 4.0 * det, 0.0))
        return np.sqrt(0.5 * (fro + disc))
    G = np.einsum("...ki,...kj->...ij", M.conj(), M)
    return np.sqrt(np.maximum(np.linalg.eigvalsh(G)[..., -1], 0.0))


def _sqrtm_psd(X: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(X)
    return (V * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def sphere_directions(m: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vectors: the axes followed by Sobol-Gaussian samples."""
    eye = np.eye(m)
    extra = max(count - m, 0)
    if extra == 0 or m == 1:
        return eye[:max(count, 1)] if m > 1 else np.ones((1, 1))
    eng = qmc.Sobol(d=m, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random(extra)
    z = _gauss.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return np.concatenate([eye, z], axis=0)


# ---------------------------------------------------------------- weights
@dataclass(frozen=True, eq=False)
class MatrixWeight:
    """Hermitian positive-definite m x m field on a mesh."""

    field: GridFunction
    family: dict = field(default_factory=lambda: {"family": "sampled"})
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        f = self.field
        if f.kind != "matrix":
            raise ValidationError("matrix weights need a matrix-kind GridFunction")
        v = f.values
        if not np.allclose(v, np.swapaxes(v, -1, -2).conj(), atol=1e-12, rtol=1e-10):
            raise ValidationError("weight is not Hermitian in every cell")
        ev = np.linalg.eigvalsh(v)
        if np.any(ev[..., 0] <= 0):
            raise ValidationError("weight is not positive definite in every cell")
        if np.any(ev[..., -1] / ev[..., 0] > self.cap):
            raise ValidationError(f"weight condition number exceeds cap {self.cap:g}")

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def m(self) -> int:
        return self.field.m

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @cached_property
    def inverse_values(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    @cached_property
    def is_diagonal(self) -> bool:
        v = self.values
        off = v - np.einsum("...ii->...i", v)[..., None] * np.eye(self.m)
        return bool(np.all(off == 0))

    # constructors
    @classmethod
    def identity(cls, grid: Grid, m: int = 1) -> "MatrixWeight":
        v = np.broadcast_to(np.eye(m), grid.shape + (m, m)).copy()
        return cls(GridFunction(grid, v, "matrix"), {"family": "identity", "m": m})

    @classmethod
    def constant(cls, grid: Grid, W0) -> "MatrixWeight":
        W0 = np.atleast_2d(np.asarray(W0, float))
        v = np.broadcast_to(W0, grid.shape + W0.shape).copy()
        return cls(GridFunction(grid, v, "matrix"), {"family": "constant", "W0": W0.tolist()})

    @staticmethod
    def _radius(grid: Grid, axes) -> np.ndarray:
        c = grid.centers()
        if axes is not None:
            c = c[..., list(axes)]
        return np.sqrt(np.sum(c * c, axis=-1))

    @classmethod
    def scalar_power(cls, grid: Grid, a: float, axes=None) -> "MatrixWeight":
        """w(x) = (1 + |x|)^a as a 1 x 1 weight."""
        w = (1.0 + cls._radius(grid, axes)) ** float(a)
        return cls(GridFunction(grid, w[..., None, None], "matrix"),
                   {"family": "scalar_power", "a": float(a), "axes": axes})

    @classmethod
    def diagonal_power(cls, grid: Grid, a, axes=None) -> "MatrixWeight":
        """diag((1 + |x|)^{a_i})."""
        a = np.atleast_1d(np.asarray(a, float))
        r = 1.0 + cls._radius(grid, axes)
        d = r[..., None] ** a
        v = d[..., :, None] * np.eye(len(a))
        return cls(GridFunction(grid, v, "matrix"),
                   {"family": "diagonal_power", "a": a.tolist(), "axes": axes})

    @classmethod
    def rotated_diagonal(cls, grid: Grid, a, rotation=math.pi / 6, axes=None) -> "MatrixWeight":
        """R diag((1 + |x|)^{a_i}) R^T with a fixed orthogonal R (angle for m = 2)."""
        a = np.atleast_1d(np.asarray(a, float))
        R = np.asarray(rotation, float)
        if R.ndim == 0:
            if len(a) != 2:
                raise ValidationError("a rotation angle needs m = 2")
            c, s = math.cos(float(R)), math.sin(float(R))
            R = np.array([[c, -s], [s, c]])
        if R.shape != (len(a), len(a)) or not np.allclose(R @ R.T, np.eye(len(a))):
            raise ValidationError("rotation must be an orthogonal m x m matrix")
        r = 1.0 + cls._radius(grid, axes)
        d = r[..., None] ** a
        v = np.einsum("ik,...k,jk->...ij", R, d, R)
        v = 0.5 * (v + np.swapaxes(v, -1, -2))
        return cls(GridFunction(grid, v, "matrix"),
                   {"family": "rotated_diagonal", "a": a.tolist(), "rotation": R.tolist(),
                    "axes": axes})

    @classmethod
    def sampled(cls, grid: Grid, values, cap: float = DEFAULT_CAP) -> "MatrixWeight":
        return cls(GridFunction(grid, values, "matrix"), {"family": "sampled"}, cap)


# ---------------------------------------------------------------- helpers
def _pvals(p, grid: Grid) -> np.ndarray:
    if isinstance(p, VariableExponent):
        v = p.on(grid)
    else:
        v = np.broadcast_to(np.asarray(p, float), grid.shape)
    if np.any(v <= 0):
        raise ValidationError("exponent must be positive")
    return v


def _cells(arr: np.ndarray, grid: Grid, cube) -> np.ndarray:
    """Cells of an aligned cube flattened to the first axis."""
    sl = grid.cube_slices(cube)
    sub = arr[sl]
    return sub.reshape((-1,) + arr.shape[grid.n:])


def _indicator_log_norms(p_rows: np.ndarray, vol: float) -> np.ndarray:
    return solve_log_norms(np.zeros_like(p_rows), p_rows, math.log(vol))[0]


def _log_norms(abs_rows: np.ndarray, p_rows: np.ndarray, vol: float, tol=DEFAULT_TOL):
    with np.errstate(divide="ignore"):
        la = np.log(abs_rows)
    return solve_log_norms(la, p_rows, math.log(vol), tol)[0]


def direction_norm(W: MatrixWeight, p, Q, z) -> float:
    """N_Q(z) = || |W(.)z| 1_Q || / || 1_Q ||."""
    return float(direction_norms(W, p, Q, np.atleast_2d(z))[0])


def direction_norms(W: MatrixWeight, p, Q, Z: np.ndarray) -> np.ndarray:
    """N_Q(z) for each row z of Z."""
    g = W.grid
    Wc = _cells(W.values, g, Q)
    pc = _cells(_pvals(p, g), g, Q)
    Z = np.asarray(Z)
    integrand = np.linalg.norm(np.einsum("cij,dj->dci", Wc, Z), axis=-1)
    P = np.broadcast_to(pc, integrand.shape)
    u = _log_norms(integrand, P, g.cell_volume)
    return np.exp(u - _indicator_log_norms(pc[None], g.cell_volume)[0])


# ---------------------------------------------------------------- John ellipsoid
@dataclass(frozen=True)
class JohnResult:
    A: np.ndarray              # (B, m, m)
    logdet_history: list       # best feasible log det A per iteration, (B,) arrays
    min_ratio: np.ndarray      # (B,) min |A u_i| over points
    max_ratio: np.ndarray      # (B,) max |A u_i| over points
    gap: np.ndarray            # certified log det suboptimality bound
    iterations: int


def _sym_basis(m: int) -> np.ndarray:
    out = []
    for a in range(m):
        for b in range(a, m):
            E = np.zeros((m, m))
            E[a, b] = E[b, a] = 1.0
            out.append(E)
    return np.array(out)


def john_ellipsoid(U: np.ndarray, seed_A: np.ndarray | None = None, gap_tol: float = 1e-9,
                   max_iter: int = 400) -> JohnResult:
    """Maximal-volume centered ellipsoid {x: |A x| <= 1} containing the points +-U.

    U has shape (B, D, m).  Solves max log det M subject to u_i^T M u_i <= 1
    (M = A^2) by a batched log-barrier Newton path in the m(m+1)/2 entries of M.
    Iterates stay strictly feasible; each is rescaled onto the constraint set
    and the best log det seen is kept, so the recorded value never drops.
    The barrier gives the certified gap D / (2 t) in log det A.
    """
    U = np.asarray(U, float)
    B, D, m = U.shape
    E = _sym_basis(m)                                   # (k, m, m)
    Acoef = np.einsum("bdi,kij,bdj->bdk", U, E, U)      # constraint rows
    if seed_A is None:
        M = np.broadcast_to(np.eye(m), (B, m, m)).copy()
    else:
        M = np.einsum("bij,bkj->bik", seed_A, seed_A)
    M /= 1.25 * np.einsum("bdi,bij,bdj->bd", U, M, U).max(axis=1)[:, None, None]
    b = np.einsum("kij,bij->bk", E, M) / np.einsum("kij,kij->k", E, E)

    def unpack(bv):
        return np.einsum("bk,kij->bij", bv, E)

    def merit(bv, t):
        Mv = unpack(bv)
        ev = np.linalg.eigvalsh(Mv)
        ld = np.sum(np.log(np.where(ev > 0, ev, 1.0)), axis=1)
        sl = 1.0 - np.einsum("bdk,bk->bd", Acoef, bv)
        ok = np.all(ev > 0, axis=1) & np.all(sl > 0, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = -t * ld - np.sum(np.log(np.where(sl > 0, sl, 1.0)), axis=1)
        return np.where(ok, val, np.inf)

    def record(bv):
        Mv = unpack(bv)
        q = np.einsum("bdi,bij,bdj->bd", U, Mv, U).max(axis=1)
        Mv = Mv / q[:, None, None]
        return 0.5 * np.linalg.slogdet(Mv)[1], Mv

    best_ld, best_M = record(b)
    history = [best_ld.copy()]
    t = np.full(B, float(D))
    gap = D / (2 * t)
    it = 0
    while it < max_iter and np.any(gap > gap_tol):
        # centering by damped Newton at the current t
        for _ in range(50):
            it += 1
            Mv = unpack(b)
            Mi = np.linalg.inv(Mv)
            sl = 1.0 - np.einsum("bdk,bk->bd", Acoef, b)
            MiE = np.einsum("bij,kjl->bkil", Mi, E)
            g = -t[:, None] * np.einsum("bkii->bk", MiE) + np.einsum("bdk,bd->bk", Acoef, 1 / sl)
            H = (t[:, None, None] * np.einsum("bkij,blji->bkl", MiE, MiE)
                 + np.einsum("bdk,bdl,bd->bkl", Acoef, Acoef, 1 / sl**2))
            step = -np.linalg.solve(H, g[..., None])[..., 0]
            dec = -np.einsum("bk,bk->b", g, step)
            f0 = merit(b, t)
            alpha = np.ones(B)
            for _ in range(60):
                f1 = merit(b + alpha[:, None] * step, t)
                bad = ~(f1 <= f0 - 0.25 * alpha * dec)
                if not bad.any():
                    break
                alpha = np.where(bad, alpha * 0.5, alpha)
            moved = ~bad
            b = np.where(moved[:, None], b + alpha[:, None] * step, b)
            ld, Mr = record(b)
            up = ld > best_ld
            best_ld = np.where(up, ld, best_ld)
            best_M = np.where(up[:, None, None], Mr, best_M)
            history.append(best_ld.copy())
            if np.all(dec < 1e-8) or it >= max_iter:
                break
        t = t * 20.0
        gap = D / (2 * t)
    A = _sqrtm_psd(best_M)
    ratios = np.linalg.norm(np.einsum("bij,bdj->bdi", A, U), axis=-1)
    if np.any(gap > 1e-3):
        raise NumericalFailure(f"John ellipsoid ascent stalled (gap {gap.max():.3e})")
    return JohnResult(A, history, ratios.min(axis=1), ratios.max(axis=1), gap, it)


# ---------------------------------------------------------------- reducing operators
def _check_method(W: MatrixWeight, method: str) -> str:
    if method == "auto":
        method = "exact-scalar" if W.m == 1 else ("exact-diagonal" if W.is_diagonal else "john")
    if method not in METHODS:
        raise ValidationError(f"unknown reducing-operator method {method!r}")
    if method == "exact-scalar" and W.m != 1:
        raise ValidationError("exact-scalar needs m = 1")
    if method == "exact-diagonal" and not W.is_diagonal:
        raise ValidationError("exact-diagonal needs a diagonal weight")
    return method


def reducing_operator(W: MatrixWeight, p, Q, method: str = "auto", dir_count: int = 64,
                      seed: int = 0, tol: float = DEFAULT_TOL, slack: float = 0.1,
                      return_info: bool = False):
    """Reducing operator A_Q of order p(.) for W on the aligned cube Q."""
    method = _check_method(W, method)
    m = W.m
    dirs = np.eye(m) if method != "john" else sphere_directions(m, dir_count, seed)
    Nz = direction_norms(W, p, Q, dirs)[None]
    if method != "john":
        A = Nz[:, :m][:, :, None] * np.eye(m)
        return (A[0], None) if return_info else A[0]
    U = dirs[None] / Nz[:, :, None]
    res = john_ellipsoid(U, Nz[:, :m][:, :, None] * np.eye(m))
    thresh = 1.0 / (math.sqrt(m) * (1.0 + slack))
    if res.min_ratio[0] < thresh:
        warnings.warn(f"reducing operator soft check: min ratio {res.min_ratio[0]:.3f} "
                      f"below {thresh:.3f}", NumericalWarning, stacklevel=2)
    return (res.A[0], res) if return_info else res.A[0]


@dataclass(frozen=True, eq=False)
class ReducingFamily:
    """Per-level arrays of reducing operators, ``levels[j]`` shaped (c,)*n + (m, m)."""

    n: int
    box_exp: int | None
    m: int
    levels: tuple
    method: str = "exact-scalar"
    d1: float | None = None
    d2: float | None = None

    @property
    def j_max(self) -> int:
        return len(self.levels) - 1

    @property
    def delta(self) -> float | None:
        return None if self.d1 is None or self.d2 is None else self.d1 + self.d2

    def __getitem__(self, Q: DyadicCube) -> np.ndarray:
        off = k_offset(self.box_exp, Q.j)
        return self.levels[Q.j][tuple(k - off for k in Q.k)]

    def __len__(self) -> int:
        return sum(int(np.prod(a.shape[:-2])) for a in self.levels)

    def items(self):
        """(Q, A_Q) in level order, k in C order."""
        for j, a in enumerate(self.levels):
            off = k_offset(self.box_exp, j)
            for idx in np.ndindex(a.shape[:-2]):
                yield DyadicCube(j, tuple(i + off for i in idx)), a[idx]

    def with_dimensions(self, d1: float, d2: float) -> "ReducingFamily":
        return ReducingFamily(self.n, self.box_exp, self.m, self.levels, self.method, d1, d2)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1, self.m, self.m) for a in self.levels])

    @classmethod
    def identity(cls, n, box_exp, m, j_max) -> "ReducingFamily":
        lv = tuple(np.broadcast_to(np.eye(m), (cubes_per_axis(box_exp, j),) * n + (m, m)).copy()
                   for j in range(j_max + 1))
        return cls(n, box_exp, m, lv, "identity", 0.0, 0.0)


def _level_direction_norms(W: MatrixWeight, pv: np.ndarray, j: int, dirs: np.ndarray):
    """(ncubes, D) direction norms for all level-j cubes."""
    g = W.grid
    Wb = g.blocks(W.values, j)                     # (Nc, C, m, m)
    pb = g.blocks(pv, j)                           # (Nc, C)
    Nc, C = pb.shape
    vol = g.cell_volume
    out = np.empty((Nc, dirs.shape[0]))
    ind = _indicator_log_norms(pb, vol)
    for d0 in range(0, dirs.shape[0], max(1, _CHUNK // max(Nc * C, 1))):
        dd = dirs[d0: d0 + max(1, _CHUNK // max(Nc * C, 1))]
        integ = np.linalg.norm(np.einsum("kcij,dj->kdci", Wb, dd), axis=-1)
        rows = integ.reshape(-1, C)
        prow = np.repeat(pb, len(dd), axis=0)
        u = _log_norms(rows, prow, vol).reshape(Nc, len(dd))
        out[:, d0: d0 + len(dd)] = np.exp(u - ind[:, None])
    return out


def reducing_family(W: MatrixWeight, p, j_max: int, method: str = "auto", dir_count: int = 64,
                    seed: int = 0, tol: float = DEFAULT_TOL, slack: float = 0.1,
                    threads: int = 1) -> ReducingFamily:
    """A_Q for every dyadic cube of levels 0..j_max inside the base box."""
    method = _check_method(W, method)
    g = W.grid
    if j_max > g.level:
        raise ValidationError("mesh level is coarser than j_max")
    m = W.m
    pv = _pvals(p, g)
    dirs = np.eye(m) if method != "john" else sphere_directions(m, dir_count, seed)

    def one(j):
        Nz = _level_direction_norms(W, pv, j, dirs)
        diag = Nz[:, :m][:, :, None] * np.eye(m)
        if method == "john":
            U = dirs[None] / Nz[:, :, None]
            res = john_ellipsoid(U, diag)
            thresh = 1.0 / (math.sqrt(m) * (1.0 + slack))
            if np.any(res.min_ratio < thresh):
                warnings.warn(f"reducing operator soft check at level {j}: min ratio "
                              f"{res.min_ratio.min():.3f} below {thresh:.3f}", NumericalWarning)
            A = res.A
        else:
            A = diag
        c = cubes_per_axis(g.box_exp, j)
        return A.reshape((c,) * g.n + (m, m))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            levels = tuple(ex.map(one, range(j_max + 1)))
    else:
        levels = tuple(one(j) for j in range(j_max + 1))
    return ReducingFamily(g.n, g.box_exp, m, levels, method)


# ---------------------------------------------------------------- characteristic
def _log_char(W: MatrixWeight, pv: np.ndarray, xcube, ycube, y_subsample=None) -> float:
    """mean over y in ycube of log(|| ||W(.)W^{-1}(y)|| 1_X || / ||1_X||), X = xcube."""
    g = W.grid
    vol = g.cell_volume
    Wx = _cells(W.values, g, xcube)
    px = _cells(pv, g, xcube)
    Wyi = _cells(W.inverse_values, g, ycube)
    if y_subsample is not None and y_subsample < len(Wyi):
        if y_subsample < 1:
            raise ValidationError("y_subsample must be positive")
        idx = np.unique(np.linspace(0, len(Wyi) - 1, int(y_subsample)).round().astype(int))
        Wyi = Wyi[idx]
    ind = _indicator_log_norms(px[None], vol)[0]
    if W.m == 1:
        u = _log_norms(np.abs(Wx[None, :, 0, 0]), px[None], vol)[0]
        return float(u - ind + np.mean(np.log(np.abs(Wyi[:, 0, 0]))))
    C = len(Wx)
    step = max(1, _CHUNK // max(C, 1))
    acc = 0.0
    for y0 in range(0, len(Wyi), step):
        blk = Wyi[y0: y0 + step]
        norms = spectral_norm(np.einsum("cij,yjk->ycik", Wx, blk))
        u = _log_norms(norms, np.broadcast_to(px, norms.shape), vol)
        acc += float(np.sum(u - ind))
    return acc / len(Wyi)


def apinfty_profile(W: MatrixWeight, p, cubes, y_subsample=None) -> np.ndarray:
    pv = _pvals(p, W.grid)
    return np.array([math.exp(_log_char(W, pv, Q, Q, y_subsample)) for Q in cubes])


def apinfty_characteristic(W: MatrixWeight, p, cubes=None, y_subsample="auto") -> float:
    """Max over the cube set of exp(mean_y log(|| ||W(.)W^{-1}(y)|| 1_Q || / ||1_Q||)).

    ``cubes=None`` uses every dyadic cube of levels 0..min(3, mesh level).
    ``y_subsample='auto'`` keeps all cells up to 2048 per cube.
    """
    if cubes is None:
        cubes = [Q for j in range(min(3, W.grid.level) + 1) for Q in W.grid.cubes(j)]
    cubes = list(cubes)
    if not cubes:
        raise ValidationError("empty cube set")
    if y_subsample == "auto":
        y_subsample = 2048
    return float(apinfty_profile(W, p, cubes, y_subsample).max())


# ---------------------------------------------------------------- dimensions
@dataclass(frozen=True)
class DimensionEstimate:
    d1: float
    d2: float
    table: list  # rows (cube, lambda, lower_quantity, upper_quantity)

    def __iter__(self):
        return iter((self.d1, self.d2))


def dimension_quantities(W: MatrixWeight, p, Q, lam: float, y_subsample=None):
    """(lower, upper) quantities of the dimension definitions for (Q, lam)."""
    pv = _pvals(p, W.grid)
    big = Q.dilate(lam) if lam != 1 else (Q.as_cube() if isinstance(Q, DyadicCube) else Q)
    low = math.exp(_log_char(W, pv, Q, big, y_subsample))
    up = math.exp(_log_char(W, pv, big, Q, y_subsample))
    return low, up


def _slope(lams, vals) -> float:
    x = np.log(np.asarray(lams, float))
    y = np.log(np.asarray(vals, float))
    return float(np.polyfit(x, y, 1)[0])


def estimate_dimensions(W: MatrixWeight, p, lambda_grid=(1, 2, 4, 8, 16), cubes=None,
                        y_subsample=None) -> DimensionEstimate:
    """Max over cubes of the log-log slopes in lambda, clamped at 0."""
    lambda_grid = [float(v) for v in lambda_grid]
    if any(v not in (1, 2, 4, 8, 16) for v in lambda_grid):
        raise ValidationError("lambda_grid must be a subset of {1, 2, 4, 8, 16}")
    g = W.grid
    if cubes is None:
        cubes = [Q for j in range(min(2, g.level) + 1) for Q in g.cubes(j)]
    table, s1, s2 = [], [], []
    for Q in cubes:
        lams, lows, ups = [], [], []
        for lam in lambda_grid:
            big = Q.dilate(lam)
            if not g.fits(big):
                continue
            lo, up = dimension_quantities(W, p, Q, lam, y_subsample)
            table.append((Q, lam, lo, up))
            lams.append(lam)
            lows.append(lo)
            ups.append(up)
        if len(lams) >= 2:
            s1.append(_slope(lams, lows))
            s2.append(_slope(lams, ups))
    if not table:
        raise ValidationError("every (cube, lambda) pair escapes the base box")
    if not s1:
        raise ValidationError("no cube has two admissible dilations")
    return DimensionEstimate(max(0.0, max(s1)), max(0.0, max(s2)), table)


# ---------------------------------------------------------------- strong doubling
def strong_doubling_constant(fam: ReducingFamily, d1: float, d2: float) -> float:
    """max over cube pairs of ||A_Q A_R^{-1}|| over the (d1, d2) doubling bound."""
    lat = Lattice(fam.n, fam.box_exp, fam.j_max)
    best = 0.0
    inv = [np.linalg.inv(a.reshape(-1, fam.m, fam.m)) for a in fam.levels]
    mats = [a.reshape(-1, fam.m, fam.m) for a in fam.levels]
    for jq in range(fam.j_max + 1):
        cq = lat.level_centers(jq)
        for jr in range(fam.j_max + 1):
            cr = lat.level_centers(jr)
            lq, lr = 2.0**-jq, 2.0**-jr
            scale = max((lr / lq) ** d1, (lq / lr) ** d2)
            step = max(1, _CHUNK // max(len(cr), 1))
            for a0 in range(0, len(cq), step):
                A = mats[jq][a0: a0 + step]
                prod = spectral_norm(np.einsum("qij,rjk->qrik", A, inv[jr]))
                dist = np.linalg.norm(cq[a0: a0 + step, None, :] - cr[None], axis=-1)
                bound = scale * (1.0 + dist / max(lq, lr)) ** (d1 + d2)
                best = max(best, float(np.max(prod / bound)))
    return best


def apinfty_level_set_check(W: MatrixWeight, p, fam: ReducingFamily, Q: DyadicCube,
                            M: float) -> float:
    """|{y in Q : ||A_Q W^{-1}(y)|| >= e^M}| / |Q| by cell counting.

    ``p`` enters only through the reducing operators stored in ``fam``.
    """
    A = fam[Q]
    Wi = _cells(W.inverse_values, W.grid, Q)
    vals = spectral_norm(np.einsum("ij,cjk->cik", A, Wi))
    return float(np.mean(vals >= math.exp(M)))
