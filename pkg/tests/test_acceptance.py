"""Acceptance criteria 1-12, each at its stated tolerance.

Every test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run.
"""
import itertools
import math
import time

import numpy as np
import pytest

from vbesov.almostdiag import (AdParams, KernelTable, SpaceIndexData, Truncation,
                               ad_condition_check, apply_almost_diagonal, czo_condition_check,
                               empirical_operator_norm, molecule_condition_check)
from vbesov.exponents import VariableExponent as VE
from vbesov.grid import CoefficientSequence, DyadicCube, Grid, GridFunction, Lattice
from vbesov.lpgrid import PROFILES, besov_function_norm, inverse_phi_transform, \
    make_admissible_pair, phi_transform
from vbesov.molecules import MoleculeParams, atom_molecule_constant, make_atom, molecule_check, \
    pairing_table
from vbesov.seqspaces import BesovSeqParams, besov_seq_norm_A, besov_seq_norm_W, random_sequence
from vbesov.trace import TraceGeometry, extend_coeffs, s_constraint, trace_coeffs, \
    trace_compatibility, trace_norm_ratio
from vbesov.varleb import mixed_norm, modular, norm
from vbesov.wavelets import WaveletCoeffSet, WaveletFilter, cascade_values, dwt, idwt
from vbesov.weights import (MatrixWeight, estimate_dimensions, reducing_family,
                            reducing_operator, sphere_directions, strong_doubling_constant)

P_VAR = VE.log_perturbed(2.0, 0.5)
WEIGHT_GRID = Grid(1, 1, 8)


def shipped_weights(grid=WEIGHT_GRID):
    return {
        "identity": MatrixWeight.identity(grid, 1),
        "scalar_power": MatrixWeight.scalar_power(grid, 0.5),
        "diagonal_power": MatrixWeight.diagonal_power(grid, [0.5, -0.25]),
        "rotated_diagonal": MatrixWeight.rotated_diagonal(grid, [0.5, -0.25]),
    }


def crit(num, title):
    return pytest.mark.criterion(num, title)


# ---------------------------------------------------------------- 1
def _exponent_families(grid):
    rng = np.random.default_rng(101)
    return {
        "constant": VE.constant(2.5),
        "log_perturbed": VE.log_perturbed(2.0, 0.5),
        "bump": VE.bump(1.5, 3.0, 0.5, 0.3),
        "sampled": VE.sampled(grid, rng.uniform(1.2, 4.0, grid.shape)),
    }


@crit(1, "variable Lebesgue norm engine")
def test_c01_varleb_identities():
    g = Grid(1, None, 6)
    start = time.perf_counter()
    worst_conf = worst_unit = 0.0
    for name, p in _exponent_families(g).items():
        for i in range(100):
            rng = np.random.default_rng([1, i])
            vals = rng.uniform(0, 3, g.shape) * (rng.random(g.shape) < 0.8)
            vals[0] = 0.5 + rng.random()
            f = GridFunction(g, vals)
            nf = norm(f, p).value
            # unit-modular correspondence
            worst_unit = max(worst_unit, abs(modular(f * (1 / nf), p) - 1.0))
            for c in (0.9, 1.1):
                h = f * (c / nf)
                assert (norm(h, p).value <= 1) == (modular(h, p) <= 1)
            for r in (0.5, 2.0, 3.0):
                lhs = norm(f, p.scaled(r)).value
                rhs = norm(GridFunction(g, np.abs(vals) ** r), p).value ** (1 / r)
                worst_conf = max(worst_conf, abs(lhs - rhs) / rhs)
    elapsed = time.perf_counter() - start
    print(f"con-f rel err {worst_conf:.2e}, unit modular err {worst_unit:.2e}, {elapsed:.2f} s")
    assert worst_conf <= 1e-8
    assert worst_unit <= 1e-8
    assert elapsed < 10.0


# ---------------------------------------------------------------- 2
@crit(2, "mixed norm")
def test_c02_single_level_collapse():
    g = Grid(1, None, 6)
    rng = np.random.default_rng(2)
    for q in (VE.constant(0.7), VE.constant(3.0), VE.bump(1.2, 2.5)):
        f0 = GridFunction(g, rng.uniform(0, 2, g.shape))
        zero = GridFunction(g, np.zeros(g.shape))
        got = mixed_norm([f0, zero, zero], P_VAR, q).value
        want = norm(f0, P_VAR).value
        assert abs(got - want) <= 1e-8 * want


@crit(2, "mixed norm")
@pytest.mark.parametrize("p,q", [(2.0, 2.0), (1.5, 3.0), (3.0, 1.0), (0.8, 0.6)])
def test_c02_constant_exponent_oracle(p, q):
    g = Grid(1, None, 6)
    rng = np.random.default_rng([2, int(10 * p), int(10 * q)])
    fs = [GridFunction(g, rng.uniform(0, 2, g.shape) * 2.0**-j) for j in range(4)]
    h = g.cell_volume
    level = [(np.sum(np.abs(f.values) ** p) * h) ** (1 / p) for f in fs]
    want = sum(v**q for v in level) ** (1 / q)
    got = mixed_norm(fs, VE.constant(p), VE.constant(q)).value
    assert abs(got - want) <= 1e-8 * want


# ---------------------------------------------------------------- 3
@crit(3, "reducing operators")
def test_c03_scalar_exact():
    W = shipped_weights()["scalar_power"]
    w = W.values[..., 0, 0]
    for Q in [DyadicCube(0, (-1,)), DyadicCube(1, (0,)), DyadicCube(3, (-2,))]:
        A = reducing_operator(W, P_VAR, Q)
        mask = WEIGHT_GRID.cube_mask(Q)
        num = norm(GridFunction(WEIGHT_GRID, np.where(mask, w, 0.0)), P_VAR).value
        den = norm(GridFunction(WEIGHT_GRID, mask.astype(float)), P_VAR).value
        assert A.shape == (1, 1)
        assert abs(A[0, 0] - num / den) <= 1e-12 * (num / den)


@crit(3, "reducing operators")
@pytest.mark.parametrize("m", [2, 3])
def test_c03_constant_matrix_distortion(m):
    rng = np.random.default_rng(30 + m)
    B = rng.standard_normal((m, m))
    W0 = B @ B.T + 0.5 * np.eye(m)
    W = MatrixWeight.constant(WEIGHT_GRID, W0)
    A = reducing_operator(W, P_VAR, DyadicCube(1, (0,)), method="john", dir_count=128)
    Z = sphere_directions(m, 1000, seed=9999)
    r = np.linalg.norm(Z @ A.T, axis=1) / np.linalg.norm(Z @ W0.T, axis=1)
    lo, hi = 1 / (math.sqrt(m) * 1.1), math.sqrt(m) * 1.1
    assert r.min() >= lo and r.max() <= hi


@crit(3, "reducing operators")
def test_c03_john_feasible():
    W = shipped_weights()["rotated_diagonal"]
    for Q in [DyadicCube(0, (-2,)), DyadicCube(2, (1,)), DyadicCube(4, (0,))]:
        A, info = reducing_operator(W, P_VAR, Q, method="john", return_info=True)
        assert info.max_ratio[0] <= 1.0 + 1e-9
        assert np.all(np.linalg.eigvalsh(A) > 0)
        hist = [float(h[0]) for h in info.logdet_history]
        assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))


# ---------------------------------------------------------------- 4, 5, 11
_FAMILY_CACHE: dict = {}


def _families(name):
    if name not in _FAMILY_CACHE:
        W = shipped_weights()[name]
        d = estimate_dimensions(W, P_VAR)
        _FAMILY_CACHE[name] = (W, d, reducing_family(W, P_VAR, 4), reducing_family(W, P_VAR, 5))
    return _FAMILY_CACHE[name]


@crit(4, "strong doubling")
@pytest.mark.parametrize("name", list(shipped_weights()))
def test_c04_strong_doubling_stable(name):
    W, d, f4, f5 = _families(name)
    c4 = strong_doubling_constant(f4, d.d1, d.d2)
    c5 = strong_doubling_constant(f5, d.d1, d.d2)
    assert 0.5 <= c5 / c4 <= 2.0


@crit(5, "equivalence b(W) ~ b(A)")
@pytest.mark.parametrize("name", list(shipped_weights()))
def test_c05_equivalence_intervals(name):
    W, _, f4, f5 = _families(name)
    q, s = VE.constant(1.5), VE.constant(0.5)
    iv = {}
    for J, fam in ((4, f4), (5, f5)):
        params = BesovSeqParams(P_VAR, q, s, J, W.m)
        r = []
        for trial in range(50):
            t = random_sequence(1, 1, W.m, J, 55, trial, decay=1.0)
            r.append(besov_seq_norm_W(t, W, params).value
                     / besov_seq_norm_A(t, fam, params, W.grid).value)
        iv[J] = (min(r), max(r))
    (lo4, hi4), (lo5, hi5) = iv[4], iv[5]
    # the J=5 interval contains the J=4 one up to a factor 2 at each end
    assert lo5 <= 2 * lo4 and hi5 >= hi4 / 2
    assert lo4 / 2 <= lo5 and hi5 <= 2 * hi4


@crit(11, "dimensions")
def test_c11_identity_dimensions():
    for grid in (WEIGHT_GRID, Grid(2, 1, 5)):
        d = estimate_dimensions(MatrixWeight.identity(grid, 2), P_VAR)
        assert d.d1 <= 0.05 and d.d2 <= 0.05


@crit(11, "dimensions")
@pytest.mark.parametrize("name", list(shipped_weights()))
def test_c11_lower_dimension_below_n_over_p(name):
    W, d, _, _ = _families(name)
    assert d.d1 < W.grid.n / P_VAR.p_minus


# ---------------------------------------------------------------- 6
@crit(6, "almost-diagonal operators")
def test_c06_composition_table_exact():
    lat = Lattice(1, 1, 3)
    rng = np.random.default_rng(6)
    A = KernelTable(lat, rng.standard_normal((lat.size, lat.size)))
    B = KernelTable.from_bdef(lat, AdParams(2.0, 1.0, 1.5))
    C = A.compose(B)
    cubes = [lat.cube(i) for i in range(lat.size)]
    for a, Q in enumerate(cubes):
        for c, R in enumerate(cubes):
            want = sum(A.matrix[a, lat.index(P)] * B.matrix[lat.index(P), c] for P in cubes)
            assert abs(C.matrix[a, c] - want) <= 1e-12 * max(1.0, abs(want))


@crit(6, "almost-diagonal operators")
@pytest.mark.parametrize("rho,dj", [(1e-2, None), (1e-3, 1), (0.2, 0)])
def test_c06_truncation_within_dropped_bound(rho, dj):
    t = random_sequence(1, 1, 2, 5, 66, 0, decay=0.5)
    ad = AdParams(2.5, 1.5, 1.5)
    exact = apply_almost_diagonal(ad, t).sequence.flat()
    res = apply_almost_diagonal(ad, t, Truncation(rho, dj))
    err = np.linalg.norm(exact - res.sequence.flat(), axis=1)
    assert np.all(err <= res.dropped_bound * (1 + 1e-12) + 1e-15)


@crit(6, "almost-diagonal operators")
def test_c06_empirical_norm_growth():
    idx = SpaceIndexData(1, P_VAR.p_minus, 0.5, 0.5)
    ad = AdParams(2.5, 1.5, 1.5)
    assert ad_condition_check(ad, idx).passed
    q, s = VE.constant(1.5), VE.constant(0.5)
    mx = {}
    for J in (5, 6):
        W = MatrixWeight.scalar_power(Grid(1, 1, J + 1), 0.5)
        mx[J] = empirical_operator_norm(ad, BesovSeqParams(P_VAR, q, s, J), W, 100, 5).max
    assert mx[6] < 1.1 * mx[5]


# ---------------------------------------------------------------- 7
@crit(7, "phi-transform")
@pytest.mark.parametrize("profile", PROFILES)
@pytest.mark.parametrize("n,G,J", [(1, 10, 6), (2, 7, 4)])
def test_c07_partition_and_reconstruction(profile, n, G, J):
    pair = make_admissible_pair(G, J, profile, n)
    assert pair.partition_residual() <= 1e-12
    g = pair.grid
    rng = np.random.default_rng(7)
    x = g.centers()
    vals = np.zeros(g.shape)
    kmax = int(pair.band / (2 * np.pi)) - 1
    for _ in range(6):
        k = rng.integers(-kmax, kmax + 1, n)
        vals += rng.standard_normal() * np.cos(2 * np.pi * (x @ k) + rng.uniform(0, 6))
    f = GridFunction(g, vals)
    back = inverse_phi_transform(phi_transform(f, pair), pair, "scalar")
    assert np.max(np.abs(back.values - vals)) <= 1e-6


@crit(7, "phi-transform")
def test_c07_profile_independence():
    q, s = VE.constant(1.5), VE.constant(0.5)
    ivs = []
    for G in (8, 9):
        g = Grid(1, None, G)
        x = g.centers()[..., 0]
        W = MatrixWeight.scalar_power(g, 0.5)
        ratios = []
        for i, fn in enumerate([np.exp(np.sin(2 * np.pi * x)) * np.cos(6 * np.pi * x),
                                np.sin(2 * np.pi * x) + 0.3 * np.cos(10 * np.pi * x),
                                np.exp(-40 * (x - 0.5) ** 2)]):
            f = GridFunction(g, fn)
            v = [besov_function_norm(f, W, make_admissible_pair(G, 5, prof, 1),
                                     BesovSeqParams(P_VAR, q, s, 5)).value for prof in PROFILES]
            ratios.append(v[0] / v[1])
        ivs.append((min(ratios), max(ratios)))
    (a0, b0), (a1, b1) = ivs
    assert max(a0, a1) <= min(b0, b1)


# ---------------------------------------------------------------- 8
@crit(8, "molecules")
def test_c08_atoms_are_molecules():
    g = Grid(1, 1, 9)
    KM = [(0.0, 0.0), (2.0, 1.0), (3.0, 3.0), (5.0, 2.5), (8.0, 8.0)]
    for Q, L, N in [(DyadicCube(0, (-1,)), 0.0, 0.5), (DyadicCube(2, (1,)), 1.0, 1.5),
                    (DyadicCube(3, (-3,)), 2.0, 2.0), (DyadicCube(4, (5,)), -1.0, 1.0)]:
        atom = make_atom(Q, L, N, g)
        for K, M in KM:
            mp = MoleculeParams(K, L, M, N, 1)
            rep = molecule_check(atom.scaled(atom_molecule_constant(K, M, 1)), mp)
            assert rep.passed, (Q, L, N, K, M, [c for c in rep.conditions if not c.ok])


@crit(8, "molecules")
def test_c08_pairing_bound_stable():
    m = MoleculeParams(4.0, 1.0, 4.0, 1.5, 1)
    b = MoleculeParams(4.0, 1.5, 4.0, 1.2, 1)
    c = [pairing_table(m, b, Grid(1, 1, L), 4).c_hat for L in (8, 9)]
    assert np.isfinite(c[0]) and c[0] > 0
    assert abs(c[1] - c[0]) / c[0] < 0.25


# ---------------------------------------------------------------- 9
def _all_basis(filt, grid):
    base = dwt(GridFunction(grid, np.zeros(grid.shape)), filt)
    out = []
    for lam, s in sorted(base.seqs.items()):
        for j, a in enumerate(s.levels):
            if lam == (0,) * grid.n and j != base.j0:
                continue
            if any(lam) and j >= grid.level:
                continue
            for idx in np.ndindex(a.shape[:-1]):
                lv = [np.zeros_like(x) for x in s.levels]
                lv[j][idx + (0,)] = 1.0
                seqs = dict(base.seqs)
                seqs[lam] = CoefficientSequence(s.n, s.box_exp, 1, tuple(lv))
                out.append(np.asarray(idwt(WaveletCoeffSet(filt, grid, base.j0, seqs)).values))
    return np.stack([v.reshape(-1) for v in out])


@crit(9, "wavelets")
@pytest.mark.parametrize("name", ["db1", "db2", "db3", "db4", "db5", "db6"])
def test_c09_perfect_reconstruction(name):
    filt = WaveletFilter.daubechies(name)
    for grid in (Grid(1, None, 9), Grid(2, None, 6)):
        f = GridFunction(grid, np.random.default_rng(9).standard_normal(grid.shape))
        back = idwt(dwt(f, filt))
        assert np.max(np.abs(back.values - f.values)) <= 1e-10


@crit(9, "wavelets")
@pytest.mark.parametrize("name", ["db1", "db2", "db4", "db6"])
def test_c09_cross_pairing_orthonormal(name):
    filt = WaveletFilter.daubechies(name)
    for grid in (Grid(1, None, 6), Grid(2, None, 4)):
        B = _all_basis(filt, grid)
        gram = B @ B.T * grid.cell_volume
        assert len(B) == grid.ncells
        assert np.max(np.abs(gram - np.eye(len(B)))) <= 1e-8


@crit(9, "wavelets")
@pytest.mark.parametrize("name", ["db1", "db2", "db3", "db4", "db5", "db6"])
def test_c09_vanishing_moments(name):
    filt = WaveletFilter.daubechies(name)
    k = np.arange(filt.length)
    for e in range(filt.vanishing_moments):
        assert abs(np.sum(k**e * filt.g)) <= 1e-8 * max(1.0, np.sum(np.abs(k**e * filt.g)))


@crit(9, "wavelets")
def test_c09_four_tap_cascade_oracle():
    filt = WaveletFilter.daubechies("db2")
    h = filt.h
    # phi(i) = sqrt2 sum_k h_k phi(2i - k) at i = 1, 2; phi(0) = phi(3) = 0
    T = math.sqrt(2) * np.array([[h[1], h[0]], [h[3], h[2]]])
    w, V = np.linalg.eig(T)
    v = np.real(V[:, np.argmin(np.abs(w - 1))])
    v = v / v.sum()
    cv = cascade_values(filt, 0)
    assert np.max(np.abs(cv.phi[1:3] - v)) <= 1e-10
    assert abs(cv.phi[0]) <= 1e-10 and abs(cv.phi[3]) <= 1e-10
    assert np.max(np.abs(v - [(1 + math.sqrt(3)) / 2, (1 - math.sqrt(3)) / 2])) <= 1e-10


# ---------------------------------------------------------------- 10
@crit(10, "trace and extension")
@pytest.mark.parametrize("name", ["db2", "db3", "db4"])
def test_c10_trace_extend_identity(name):
    filt = WaveletFilter.daubechies(name)
    geom = TraceGeometry.build(filt)
    g1 = Grid(1, 4, 5)
    rng = np.random.default_rng(10)
    v = dwt(GridFunction(g1, rng.standard_normal(g1.shape)), filt)
    back = trace_coeffs(extend_coeffs(v, geom), geom)
    for lam, s in v.seqs.items():
        b = back.seqs[lam].resized(s.j_max)
        assert np.max(np.abs(b.flat() - s.flat())) <= 1e-12
        assert not np.any(back.seqs[lam].flat()[len(s.flat()):])


@crit(10, "trace and extension")
@pytest.mark.parametrize("lam_n", [0, 1])
def test_c10_single_coefficient_formula(lam_n):
    filt = WaveletFilter.daubechies("db2")
    geom = TraceGeometry.build(filt)
    g2 = Grid(2, 2, 5)
    samples = geom.psi_at if lam_n else geom.phi_at
    for j, i1, k in [(0, 1, -1), (2, -3, -2), (3, 4, 0), (1, 0, -3)]:
        Q = DyadicCube(j, (i1, k))
        seqs = {lam: CoefficientSequence.zeros(2, 2, 1, 3) for lam in itertools.product((0, 1), repeat=2)}
        seqs[(1, lam_n)] = seqs[(1, lam_n)].with_value(Q, 1.0)
        out = trace_coeffs(WaveletCoeffSet(filt, g2, 0, seqs), geom)
        I = DyadicCube(j, (i1,))
        want = Q.side ** -0.5 * samples[k]
        assert out.seqs[(1,)][I][0] == pytest.approx(want, abs=1e-15)
        rest = out.seqs[(1,)].with_value(I, 0.0)
        assert not np.any(rest.flat()) and not np.any(out.seqs[(0,)].flat())


@crit(10, "trace and extension")
def test_c10_far_slabs_give_zero():
    filt = WaveletFilter.daubechies("db3")
    geom = TraceGeometry.build(filt)
    g2 = Grid(2, 4, 5)
    rng = np.random.default_rng(100)
    seqs = {}
    for lam in itertools.product((0, 1), repeat=2):
        lv = []
        for j in range(4):
            a = rng.standard_normal((2 ** (4 + j + 1),) * 2 + (1,))
            k = np.arange(a.shape[1]) - 2 ** (4 + j)
            a[:, np.abs(k) <= geom.N] = 0.0
            lv.append(a)
        seqs[lam] = CoefficientSequence(2, 4, 1, tuple(lv))
    out = trace_coeffs(WaveletCoeffSet(filt, g2, 0, seqs), geom)
    for s in out.seqs.values():
        assert np.all(s.flat() == 0.0)


@crit(10, "trace and extension")
def test_c10_trace_norm_ratio_stable():
    filt = WaveletFilter.daubechies("db2")
    geom = TraceGeometry.build(filt)
    two = VE.constant(2.0)
    stats = {}
    for J in (3, 4):
        g2, g1 = Grid(2, 1, J + 1), Grid(1, 1, J + 1)
        W = MatrixWeight.diagonal_power(g2, [0.3, -0.2], axes=[0])
        V = MatrixWeight.diagonal_power(g1, [0.3, -0.2])
        d = estimate_dimensions(V, two)
        assert s_constraint(VE.constant(1.0), two, g1, d.d2).passed
        comp = trace_compatibility(W, V, two, [DyadicCube(1, (0,)), DyadicCube(2, (-3,))])
        assert np.isfinite(comp.c_forward)
        pW = BesovSeqParams(two, two, VE.constant(1.0), J, 2)
        pV = BesovSeqParams(two, two, VE.constant(0.5), J, 2)
        stats[J] = trace_norm_ratio(W, V, pW, pV, geom, J, 20, 1).max
    assert np.isfinite(stats[3])
    assert stats[4] < 1.1 * stats[3]


# ---------------------------------------------------------------- 12
IDX_A = SpaceIndexData(1, 2.0, 0.5, 0.5)     # J = n = 1, C = 0
IDX_B = SpaceIndexData(1, 2.0, 1.0, -1.0)
IDX_C = SpaceIndexData(1, 2.0, 1.5, -0.5)
IDX_D = SpaceIndexData(1, 2.0, 0.0, -1.0)
MOL = MoleculeParams(3.0, 1.0, 2.0, 1.5, 1)

# (kind, args, index, expected pass, expected violated conditions), hand-computed
FIXTURE = [
    ("ad", (2.0, 1.5, 0.5), IDX_A, True, []),
    ("ad", (1.0, 2.0, 1.0), IDX_A, False, ["D > J + C"]),
    ("ad", (3.0, 1.5, 2.0), IDX_B, False, ["E > n/2 + s+"]),
    ("analysis", (2.0, 0.5, 1.5, 0.0), IDX_A, True, []),
    ("analysis", (1.5, 1.0, 2.0, 1.0), IDX_A, False, ["K > (n + s+) v (J + C)"]),
    ("synthesis", (2.0, -0.5, 2.0, 0.5), IDX_A, False, ["N > s+"]),
    ("synthesis", (1.2, 0.0, 1.1, 0.6), IDX_A, True, []),
    ("theorem", (1, 0.5, 0.1, 0.0, 0.0), IDX_A, True, []),
    ("theorem", (1, 2.0, 0.5, 1.0, 0.0), IDX_C, False, ["F > J - n + max(-s-, C)"]),
    ("theorem", (0, 0.0, 1.5, 0.0, 1.0), IDX_D, True, []),
    ("atoms", (1, 1.5, 1.5, 1.0, 1.0), None, True, []),
    ("noncancellative-atoms", (1, 1.5, 1.0, 1.0, 0.0), None, True, []),
]


@crit(12, "condition checkers")
@pytest.mark.parametrize("row", range(len(FIXTURE)))
def test_c12_condition_table(row):
    kind, args, idx, ok, violated = FIXTURE[row]
    if kind == "ad":
        rep = ad_condition_check(AdParams(*args), idx)
    elif kind in ("analysis", "synthesis"):
        rep = molecule_condition_check(kind, MoleculeParams(*args, 1), idx)
    else:
        rep = czo_condition_check(*args, idx=idx, mode=kind, molecule=MOL)
    assert idx is None or (idx.J == 1.0 and idx.C == 0.0)
    assert rep.passed == ok
    assert rep.violated == violated
