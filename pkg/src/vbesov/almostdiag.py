"""Almost-diagonal kernels b^{DEF}, their application, and parameter-condition checkers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .errors import ValidationError
from .exponents import VariableExponent, log_holder_constants
from .grid import CoefficientSequence, DyadicCube, Lattice
from .seqspaces import BesovSeqParams, besov_seq_norm_A, besov_seq_norm_W, random_sequence
from .weights import MatrixWeight, ReducingFamily


@dataclass(frozen=True)
class AdParams:
    D: float
    E: float
    F: float


def floor_strict(r: float) -> int:
    """Largest integer strictly below r."""
    f = math.floor(r)
    return f - 1 if f == r else f


def ceil_strict(r: float) -> int:
    """Smallest integer strictly above r."""
    c = math.ceil(r)
    return c + 1 if c == r else c


def plus(r: float) -> float:
    return max(r, 0.0)


def bdef_entry(Q: DyadicCube, R: DyadicCube, params: AdParams) -> float:
    lq, lr = Q.side, R.side
    dist = float(np.linalg.norm(Q.center - R.center))
    first = (1.0 + dist / max(lq, lr)) ** (-params.D)
    second = (lq / lr) ** params.E if lq <= lr else (lr / lq) ** params.F
    return first * second


def bdef_block(cq: np.ndarray, jq: int, cr: np.ndarray, jr: int, params: AdParams) -> np.ndarray:
    """Entries for all (Q, R) with Q at level jq (centers cq) and R at level jr."""
    lq, lr = 2.0**-jq, 2.0**-jr
    dist = np.linalg.norm(cq[:, None, :] - cr[None, :, :], axis=-1)
    return _level_factor(jq, jr, params) * (1.0 + dist / max(lq, lr)) ** (-params.D)


def _level_factor(jq: int, jr: int, params: AdParams) -> float:
    lq, lr = 2.0**-jq, 2.0**-jr
    return (lq / lr) ** params.E if lq <= lr else (lr / lq) ** params.F


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Explicit kernel on a finite lattice: ``matrix[a, b] = b_{Q_a, R_b}``."""

    lattice: Lattice
    matrix: np.ndarray

    def __post_init__(self):
        N = self.lattice.size
        if self.matrix.shape != (N, N):
            raise ValidationError(f"kernel table must be {N} x {N}")

    @classmethod
    def identity(cls, lattice: Lattice) -> "KernelTable":
        return cls(lattice, np.eye(lattice.size))

    @classmethod
    def zero(cls, lattice: Lattice) -> "KernelTable":
        return cls(lattice, np.zeros((lattice.size, lattice.size)))

    @classmethod
    def from_bdef(cls, lattice: Lattice, params: AdParams) -> "KernelTable":
        sl = lattice.level_slices()
        M = np.empty((lattice.size, lattice.size))
        for jq in range(lattice.j_max + 1):
            cq = lattice.level_centers(jq)
            for jr in range(lattice.j_max + 1):
                M[sl[jq], sl[jr]] = bdef_block(cq, jq, lattice.level_centers(jr), jr, params)
        return cls(lattice, M)

    @classmethod
    def from_entries(cls, lattice: Lattice, entries: dict) -> "KernelTable":
        """``entries`` maps (Q, R) cube pairs to values."""
        cplx = any(np.iscomplexobj(v) for v in entries.values())
        M = np.zeros((lattice.size, lattice.size), complex if cplx else float)
        for (Q, R), v in entries.items():
            M[lattice.index(Q), lattice.index(R)] = v
        return cls(lattice, M)

    def compose(self, other: "KernelTable") -> "KernelTable":
        """Table of self o other: sum over P of b1_{Q,P} b2_{P,R}."""
        if other.lattice != self.lattice:
            raise ValidationError("kernels live on different lattices")
        return KernelTable(self.lattice, self.matrix @ other.matrix)


@dataclass(frozen=True)
class Truncation:
    """Drop pairs whose distance factor is below ``rho`` or whose levels differ by > dj."""

    rho: float = 0.0
    dj: int | None = None


@dataclass(frozen=True, eq=False)
class ADResult:
    sequence: CoefficientSequence
    dropped_bound: np.ndarray | None = None   # per output cube, lattice order


def _lattice_of(t: CoefficientSequence) -> Lattice:
    return Lattice(t.n, t.box_exp, t.j_max)


def apply_almost_diagonal(kernel, t: CoefficientSequence,
                          truncation: Truncation | None = None) -> ADResult:
    """(Bt)_Q = sum_R b_{Q,R} t_R on the finite lattice of t."""
    lat = _lattice_of(t)
    flat = t.flat()
    if isinstance(kernel, KernelTable):
        if kernel.lattice != lat:
            raise ValidationError("kernel table lattice does not match the sequence")
        if truncation is None:
            out = kernel.matrix @ flat
            return ADResult(CoefficientSequence.from_flat(out, t.n, t.box_exp, t.m, t.j_max))
        keep = _keep_mask(kernel, truncation)
        M = np.where(keep, kernel.matrix, 0)
        out = M @ flat
        dropped = np.abs(np.where(keep, 0, kernel.matrix)) @ np.linalg.norm(flat, axis=1)
        return ADResult(CoefficientSequence.from_flat(out, t.n, t.box_exp, t.m, t.j_max), dropped)
    if not isinstance(kernel, AdParams):
        raise ValidationError("kernel must be AdParams or a KernelTable")
    sl = lat.level_slices()
    dt = complex if np.iscomplexobj(flat) else float
    out = np.zeros(flat.shape, dt)
    if truncation is None:
        for jq in range(lat.j_max + 1):
            cq = lat.level_centers(jq)
            for jr in range(lat.j_max + 1):
                blk = bdef_block(cq, jq, lat.level_centers(jr), jr, kernel)
                out[sl[jq]] += blk @ flat[sl[jr]]
        return ADResult(CoefficientSequence.from_flat(out, t.n, t.box_exp, t.m, t.j_max))
    return _apply_truncated(kernel, t, lat, flat, truncation)


def _keep_mask(kernel: KernelTable, tr: Truncation) -> np.ndarray:
    """Explicit tables keep pairs inside the level window with |entry| >= rho."""
    lev = kernel.lattice.arrays()[0]
    keep = np.abs(kernel.matrix) >= tr.rho
    if tr.dj is not None:
        keep &= np.abs(lev[:, None] - lev[None]) <= tr.dj
    return keep


def _apply_truncated(params: AdParams, t, lat: Lattice, flat, tr: Truncation) -> ADResult:
    """Sparse evaluation; pairs are found per level pair with a k-d tree.

    Dropped-mass bound for Q at level j: every dropped pair inside the level
    window has entry < rho * level_factor, and level-window drops are counted
    in full, so the bound is sum_i w_i ||t_i||_1 with w_i = rho * f(j, i)
    (|i - j| <= dj) or f(j, i) (|i - j| > dj).
    """
    sl = lat.level_slices()
    J = lat.j_max
    mags = np.linalg.norm(flat, axis=1)
    l1 = np.array([mags[s].sum() for s in sl])
    dt = complex if np.iscomplexobj(flat) else float
    out = np.zeros(flat.shape, dt)
    bound = np.zeros(lat.size)
    dj = J if tr.dj is None else tr.dj
    rho = tr.rho
    for jq in range(J + 1):
        cq = lat.level_centers(jq)
        for jr in range(J + 1):
            f = _level_factor(jq, jr, params)
            if abs(jq - jr) > dj:
                bound[sl[jq]] += f * l1[jr]
                continue
            cr = lat.level_centers(jr)
            lmax = max(2.0**-jq, 2.0**-jr)
            if rho <= 0 or params.D <= 0:
                blk = bdef_block(cq, jq, cr, jr, params)
                out[sl[jq]] += blk @ flat[sl[jr]]
                continue
            radius = (rho ** (-1.0 / params.D) - 1.0) * lmax
            tree = cKDTree(cr)
            pairs = tree.query_ball_point(cq, r=radius * (1 + 1e-12) + 1e-15)
            rows = np.repeat(np.arange(len(cq)), [len(p) for p in pairs])
            cols = np.fromiter((c for p in pairs for c in p), int, count=len(rows))
            if len(rows):
                d = np.linalg.norm(cq[rows] - cr[cols], axis=-1)
                fac = (1.0 + d / lmax) ** (-params.D)
                ok = fac >= rho
                vals = f * fac[ok]
                S = coo_matrix((vals, (rows[ok], cols[ok])), shape=(len(cq), len(cr))).tocsr()
                out[sl[jq]] += S @ flat[sl[jr]]
            bound[sl[jq]] += rho * f * l1[jr]
    seq = CoefficientSequence.from_flat(out, t.n, t.box_exp, t.m, t.j_max)
    return ADResult(seq, bound)


# ---------------------------------------------------------------- condition arithmetic
@dataclass(frozen=True)
class SpaceIndexData:
    """Index data of a space b^{s}_{p,q}(W): n, p_-, s_+-, Clog(s), Clog(1/q), d_upper."""

    n: int
    p_minus: float
    s_plus: float
    s_minus: float
    clog_s: float = 0.0
    clog_inv_q: float = 0.0
    d_upper: float = 0.0

    @property
    def J(self) -> float:
        return self.n / min(1.0, self.p_minus) + self.d_upper

    @property
    def C(self) -> float:
        return self.clog_s + self.clog_inv_q

    def with_d_upper(self, d: float) -> "SpaceIndexData":
        return SpaceIndexData(self.n, self.p_minus, self.s_plus, self.s_minus, self.clog_s,
                              self.clog_inv_q, d)

    @classmethod
    def from_exponents(cls, n: int, p: VariableExponent, q: VariableExponent,
                       s: VariableExponent, d_upper: float = 0.0, pair_count: int = 4096,
                       seed: int = 0, box=None) -> "SpaceIndexData":
        cs = 0.0 if s.is_constant else log_holder_constants(
            s, pair_count, seed, box, n, with_infinity=False).clog
        cq = 0.0 if q.is_constant else log_holder_constants(
            q.reciprocal(), pair_count, seed, box, n, with_infinity=False).clog
        return cls(n, p.p_minus, s.p_plus, s.p_minus, cs, cq, d_upper)


@dataclass(frozen=True)
class Inequality:
    name: str
    lhs: float
    op: str
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs > self.rhs if self.op == ">" else self.lhs >= self.rhs

    def __str__(self) -> str:
        return f"{self.name}: {self.lhs:g} {self.op} {self.rhs:g} [{'ok' if self.ok else 'FAIL'}]"


@dataclass(frozen=True)
class ConditionReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def violated(self) -> list[str]:
        return [c.name for c in self.checks if not c.ok]

    def __bool__(self) -> bool:
        return self.passed


def ad_condition_check(params: AdParams, idx: SpaceIndexData) -> ConditionReport:
    J, C, n = idx.J, idx.C, idx.n
    return ConditionReport((
        Inequality("D > J + C", params.D, ">", J + C),
        Inequality("E > n/2 + s+", params.E, ">", n / 2 + idx.s_plus),
        Inequality("F > J - n/2 - s-", params.F, ">", J - n / 2 - idx.s_minus),
    ))


def molecule_condition_check(kind: str, mp, idx: SpaceIndexData) -> ConditionReport:
    """Analysis or synthesis index conditions for (K, L, M, N)-molecules."""
    J, C, n = idx.J, idx.C, idx.n
    if kind == "analysis":
        return ConditionReport((
            Inequality("K > (n + s+) v (J + C)", mp.K, ">", max(n + idx.s_plus, J + C)),
            Inequality("L >= s+", mp.L, ">=", idx.s_plus),
            Inequality("M > J + C", mp.M, ">", J + C),
            Inequality("N > J - n - s-", mp.N, ">", J - n - idx.s_minus),
        ))
    if kind == "synthesis":
        return ConditionReport((
            Inequality("K > (J - s-) v (J + C)", mp.K, ">", max(J - idx.s_minus, J + C)),
            Inequality("L >= J - n - s-", mp.L, ">=", J - n - idx.s_minus),
            Inequality("M > J + C", mp.M, ">", J + C),
            Inequality("N > s+", mp.N, ">", idx.s_plus),
        ))
    raise ValidationError(f"unknown molecule kind {kind!r}")


def czo_condition_check(sigma: int, E: float, F: float, G: float, H: float,
                        idx: SpaceIndexData | None = None, mode: str = "theorem",
                        molecule=None) -> ConditionReport:
    """Conditions on lnCZO^sigma(E, F, G, H).

    ``mode='theorem'`` uses the space data ``idx``; ``'atoms'`` and
    ``'noncancellative-atoms'`` check the atom-to-molecule conditions for the
    (K, L, M, N) record ``molecule``.
    """
    if mode == "theorem":
        if idx is None:
            raise ValidationError("theorem mode needs space index data")
        J, C, n, sp, sm = idx.J, idx.C, idx.n, idx.s_plus, idx.s_minus
        return ConditionReport((
            Inequality("sigma >= 1(s+ > 0)", sigma, ">=", 1.0 if sp > 0 else 0.0),
            Inequality("E >= (s+)^(+)", E, ">=", plus(sp)),
            Inequality("F > J - n + max(-s-, C)", F, ">", J - n + max(-sm, C)),
            Inequality("G >= floor(s+)^(+)", G, ">=", plus(math.floor(sp))),
            Inequality("H >= floor(J - n - s-)^(+)", H, ">=", plus(math.floor(J - n - sm))),
        ))
    if molecule is None:
        raise ValidationError(f"mode {mode!r} needs molecule parameters")
    K, L, M, N = molecule.K, molecule.L, molecule.M, molecule.N
    checks = [
        Inequality("sigma >= 1(N > 0)", sigma, ">=", 1.0 if N > 0 else 0.0),
        Inequality("E >= N", E, ">=", N),
        Inequality("E > floor(N)^(+)", E, ">", plus(math.floor(N))),
        Inequality("F >= (K ^ M) - n", F, ">=", min(K, M) - molecule.n),
    ]
    if mode == "atoms":
        checks.append(Inequality("F > floor(L)", F, ">", math.floor(L)))
    elif mode != "noncancellative-atoms":
        raise ValidationError(f"unknown czo mode {mode!r}")
    checks.append(Inequality("G >= floor(N)^(+)", G, ">=", plus(math.floor(N))))
    if mode == "atoms":
        checks.append(Inequality("H >= floor(L)^(+)", H, ">=", plus(math.floor(L))))
    return ConditionReport(tuple(checks))


# ---------------------------------------------------------------- empirical norms
@dataclass(frozen=True)
class OperatorNormStats:
    ratios: np.ndarray
    max: float
    median: float
    q90: float


def empirical_operator_norm(kernel, params: BesovSeqParams, weight, trials: int, seed: int,
                            box_exp=None, decay: float | None = None,
                            grid=None) -> OperatorNormStats:
    """Ratios ||Bt|| / ||t|| over seeded random sequences.

    ``weight`` is a MatrixWeight (b(W) norms) or a ReducingFamily (b(A)).
    Level j entries are scaled by 2^{-j decay}; the default balances the
    levels for the midpoint smoothness, s_mid + n/2.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if isinstance(weight, MatrixWeight):
        n, box_exp, m = weight.grid.n, weight.grid.box_exp, weight.m

        def nrm(t):
            return besov_seq_norm_W(t, weight, params).value
    elif isinstance(weight, ReducingFamily):
        n, box_exp, m = weight.n, weight.box_exp, weight.m

        def nrm(t):
            return besov_seq_norm_A(t, weight, params, grid).value
    else:
        raise ValidationError("weight must be a MatrixWeight or ReducingFamily")
    if decay is None:
        decay = 0.5 * (params.s.p_minus + params.s.p_plus) + n / 2
    ratios = []
    trial = 0
    while len(ratios) < trials:
        t = random_sequence(n, box_exp, m, params.j_max, seed, trial, decay)
        trial += 1
        den = nrm(t)
        if den == 0:
            continue
        ratios.append(nrm(apply_almost_diagonal(kernel, t).sequence) / den)
    r = np.array(ratios)
    return OperatorNormStats(r, float(r.max()), float(np.median(r)), float(np.quantile(r, 0.9)))
