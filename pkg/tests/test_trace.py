import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbesov.errors import ValidationError
from vbesov.exponents import VariableExponent as VE
from vbesov.grid import CoefficientSequence, DyadicCube, Grid
from vbesov.trace import (TraceGeometry, extend_coeffs, random_coeff_set, restrict_to_hyperplane,
                          s_constraint, slab_consistency, trace_coeffs, trace_compatibility,
                          trace_norm_ratio)
from vbesov.wavelets import WaveletCoeffSet, WaveletFilter
from vbesov.seqspaces import BesovSeqParams
from vbesov.weights import MatrixWeight

DB2 = WaveletFilter.daubechies(2)
GEOM = TraceGeometry.build(DB2)
BOX = 3
G2 = Grid(2, BOX, 3)
G1 = Grid(1, BOX, 3)


def single(lam, j, k, value=1.0, J=2):
    seqs = {l: CoefficientSequence.zeros(2, BOX, 1, J if any(l) else 0)
            for l in [(0, 0), (0, 1), (1, 0), (1, 1)]}
    entry = {DyadicCube(j, k): value}
    seqs[lam] = CoefficientSequence.from_dict(entry, 2, BOX, 1, seqs[lam].j_max)
    return WaveletCoeffSet(DB2, G2, 0, seqs)


def test_geometry_values():
    assert GEOM.N == int(np.ceil(3 * np.sqrt(2))) == 5
    assert abs(GEOM.phi_at[GEOM.k0]) > 0.5
    assert GEOM.Q(DyadicCube(2, (3,)), -4) == DyadicCube(2, (3, -4))
    assert all(GEOM.phi_at[k] == 0 for k in range(1, GEOM.N + 1))
    with pytest.raises(ValidationError):
        TraceGeometry.build(DB2, k0=2)
    with pytest.raises(ValidationError):
        TraceGeometry.build(DB2, n=3)


def test_zero_in_zero_out():
    u = single((0, 1), 1, (0, 0), 0.0)
    assert all(not np.any(s.flat()) for s in trace_coeffs(u, GEOM).seqs.values())
    v = trace_coeffs(u, GEOM)
    assert all(not np.any(s.flat()) for s in extend_coeffs(v, GEOM).seqs.values())


def test_far_slab_ignored():
    u = single((1, 0), 0, (1, 6))           # |k| = 6 > N = 5
    assert all(not np.any(s.flat()) for s in trace_coeffs(u, GEOM).seqs.values())


def test_anchor_hand_instance():
    j, I = 1, (3,)
    u = single((1, 0), j, I + (GEOM.k0,), 1.0)
    out = trace_coeffs(u, GEOM).seqs[(1,)]
    want = 2 ** (j / 2) * GEOM.phi_at[GEOM.k0]
    assert out[DyadicCube(j, I)][0] == pytest.approx(want, rel=1e-14)
    assert np.count_nonzero(out.flat()) == 1


def test_trace_is_linear_sum_over_k():
    j, I = 2, (-5,)
    for ln, table in ((0, GEOM.phi_at), (1, GEOM.psi_at)):
        total = 0.0
        for k in range(-3, 4):
            u = single((1, ln), j, I + (k,), 1.0)
            total += trace_coeffs(u, GEOM).seqs[(1,)][DyadicCube(j, I)][0]
        assert total == pytest.approx(2 ** (j / 2) * sum(table[k] for k in range(-3, 4)))


def test_extension_support_and_round_trip():
    v = trace_coeffs(random_coeff_set(DB2, G2, 2, 1, 4), GEOM)
    e = extend_coeffs(v, GEOM)
    for lam, s in e.seqs.items():
        for Q, val in s.items():
            if np.any(val):
                assert lam[-1] == 0 and Q.k[-1] == GEOM.k0
    back = trace_coeffs(e, GEOM)
    for lam in v.seqs:
        assert np.allclose(back.seqs[lam].flat(), v.seqs[lam].flat(), rtol=0, atol=1e-12)


def test_box_required():
    u = random_coeff_set(DB2, Grid(2, None, 3), 1, 1, 0)
    with pytest.raises(ValidationError):
        trace_coeffs(u, GEOM)
    v = random_coeff_set(DB2, Grid(1, None, 3), 1, 1, 0)
    with pytest.raises(ValidationError):
        extend_coeffs(v, GEOM)


def test_filter_mismatch():
    u = random_coeff_set(WaveletFilter.daubechies(3), G2, 1, 1, 0)
    with pytest.raises(ValidationError):
        trace_coeffs(u, GEOM)


def test_compatibility_identity():
    W, V = MatrixWeight.identity(G2, 2), MatrixWeight.identity(G1, 2)
    p = VE.constant(2)
    I_set = [DyadicCube(0, (0,)), DyadicCube(1, (-3,))]
    res = trace_compatibility(W, V, p, I_set, k_max=3)
    assert res.c_forward == pytest.approx(1, rel=1e-9)
    assert res.c_backward == pytest.approx(1, rel=1e-9)
    assert all(r == pytest.approx(1.0, rel=1e-9) for _, k, r in res.table)
    assert {k for _, k, _ in res.table} == set(range(-3, 4))


def test_compatibility_product_weight():
    # V constant in x_n: W(x', x_n) = V(x') gives matching indicator-norm ratios
    V = MatrixWeight.scalar_power(G1, 0.4)
    vals = np.repeat(V.values[:, None], G2.cells_per_axis, axis=1)
    W = MatrixWeight.sampled(G2, vals)
    p = VE.constant(2)
    res = trace_compatibility(W, V, p, [DyadicCube(1, (2,)), DyadicCube(0, (-1,))], k_max=0)
    assert res.c_forward == pytest.approx(1, rel=1e-9)
    assert res.c_backward == pytest.approx(1, rel=1e-9)


def test_compatibility_rejects_mismatch():
    with pytest.raises(ValidationError):
        trace_compatibility(MatrixWeight.identity(G2, 2), MatrixWeight.identity(G1, 1),
                            VE.constant(2), [DyadicCube(0, (0,))])


def test_gates():
    slab_consistency({"p": VE.constant(2)}, G2)
    with pytest.raises(ValidationError):
        slab_consistency({"p": VE.bump(1.5, 3.0)}, G2)
    rep = s_constraint(VE.constant(1.0), VE.constant(2.0), G2, 0.2)
    assert rep.passed
    assert not s_constraint(VE.constant(0.6), VE.constant(2.0), G2, 0.2).passed
    r = restrict_to_hyperplane(VE.constant(2.5))
    assert np.allclose(r.on(G1), 2.5)


def test_trace_norm_ratio_identity():
    W, V = MatrixWeight.identity(G2, 1), MatrixWeight.identity(G1, 1)
    pw = BesovSeqParams(VE.constant(2), VE.constant(2), VE.constant(1.0), 2)
    pv = BesovSeqParams(VE.constant(2), VE.constant(2), VE.constant(0.5), 2)
    st_ = trace_norm_ratio(W, V, pw, pv, GEOM, 2, 4, 0)
    assert len(st_.ratios) == 4 and np.all(np.isfinite(st_.ratios)) and st_.max > 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-5, 5))
def test_trace_linear(seed, c):
    u = random_coeff_set(DB2, G2, 2, 1, seed)
    a = trace_coeffs(u.scaled(c), GEOM)
    b = trace_coeffs(u, GEOM)
    for lam in a.seqs:
        assert np.allclose(a.seqs[lam].flat(), c * b.seqs[lam].flat(), atol=1e-12)
