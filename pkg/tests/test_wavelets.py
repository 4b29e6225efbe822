import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbesov.errors import ValidationError
from vbesov.exponents import VariableExponent as VE
from vbesov.grid import Grid, GridFunction
from vbesov.molecules import pairing
from vbesov.seqspaces import BesovSeqParams
from vbesov.wavelets import (WaveletFilter, basis_function, cascade_values, dwt, idwt,
                             shipped_filters, verify_filter, wavelet_besov_norm)
from vbesov.weights import MatrixWeight

NAMES = shipped_filters()


@pytest.mark.parametrize("name", NAMES)
def test_filter_identities(name):
    f = WaveletFilter.daubechies(name)
    assert f.h.sum() == pytest.approx(math.sqrt(2), abs=1e-14)
    L = f.length
    for l in range(L // 2):
        assert np.dot(f.h[: L - 2 * l], f.h[2 * l:]) == pytest.approx(float(l == 0), abs=1e-14)
    assert f.g.sum() == pytest.approx(0.0, abs=1e-14)


def test_regularity_tags():
    tags = [WaveletFilter.daubechies(n).regularity for n in NAMES]
    assert tags[0] == -1 and tags == sorted(tags)


def test_corrupt_filter_rejected():
    f = WaveletFilter.daubechies("db2")
    bad = WaveletFilter("bad", f.h * 1.001, 0, 2)
    with pytest.raises(Exception):
        verify_filter(bad)
    with pytest.raises(ValidationError):
        WaveletFilter.daubechies("db9")


def test_haar_constant_has_no_details():
    g = Grid(1, None, 6)
    c = dwt(GridFunction(g, np.ones(g.shape)), WaveletFilter.daubechies(1))
    for lam, s in c.seqs.items():
        if any(lam):
            assert not np.any(s.flat())


@pytest.mark.parametrize("name", ["db1", "db3", "db6"])
@pytest.mark.parametrize("n,G", [(1, 9), (2, 6)])
def test_round_trip_and_energy(name, n, G):
    g = Grid(n, None, G)
    f = GridFunction(g, np.random.default_rng(G).standard_normal(g.shape))
    c = dwt(f, WaveletFilter.daubechies(name))
    back = idwt(c)
    assert np.max(np.abs(np.asarray(back.values) - np.asarray(f.values))) <= 1e-10
    assert c.energy() == pytest.approx(np.sum(np.asarray(f.values) ** 2) * g.cell_volume, rel=1e-10)


def test_level_overflow_and_dimension_errors():
    with pytest.raises(ValidationError):
        dwt(GridFunction(Grid(1, None, 4), np.zeros(16)), WaveletFilter.daubechies(2), 9)
    with pytest.raises(ValidationError):
        dwt(GridFunction(Grid(3, None, 2), np.zeros((4, 4, 4))), WaveletFilter.daubechies(1))


def test_basis_orthonormal_small():
    g = Grid(1, None, 6)
    filt = WaveletFilter.daubechies(2)
    fns = [basis_function(filt, g, (1,), j, (k,)) for j in (2, 3) for k in range(2 ** j)]
    gram = np.array([[pairing(a, b) for b in fns] for a in fns])
    assert np.max(np.abs(gram - np.eye(len(fns)))) <= 1e-10


def test_cascade_haar():
    c = cascade_values(WaveletFilter.daubechies(1), 3)
    assert c.phi[0] == 1.0 and c.k0 == 0
    assert np.allclose(c.phi[:-1], 1.0, atol=1e-14) and c.phi[-1] == 0


def test_cascade_db2_eigenvector_oracle():
    h = WaveletFilter.daubechies(2).h * math.sqrt(2)
    # interior values phi(1), phi(2): phi(1) = h1 phi(1) + h0 phi(2), phi(2) = h3 phi(1) + h2 phi(2)
    A = np.array([[h[1], h[0]], [h[3], h[2]]])
    w, V = np.linalg.eig(A)
    v = np.real(V[:, np.argmin(np.abs(w - 1))])
    v = v / v.sum()
    c = cascade_values(WaveletFilter.daubechies(2), 0)
    assert np.allclose(c.phi[1:3], v, atol=1e-12)
    assert np.allclose(c.phi[1:3], [(1 + math.sqrt(3)) / 2, (1 - math.sqrt(3)) / 2], atol=1e-12)
    assert c.phi[0] == pytest.approx(0, abs=1e-14) and c.phi[3] == pytest.approx(0, abs=1e-14)
    assert c.phi[-c.k0] != 0


@pytest.mark.parametrize("name", ["db2", "db3", "db4"])
def test_cascade_partition_of_unity(name):
    d = 6
    c = cascade_values(WaveletFilter.daubechies(name), d)
    S = c.x[-1]
    step = 2 ** d
    for i in range(step):
        total = sum(c.phi[i + k * step] for k in range(int(S)) if i + k * step < len(c.phi))
        assert total == pytest.approx(1.0, abs=1e-8)


def test_cascade_two_scale_relation():
    filt = WaveletFilter.daubechies(3)
    c = cascade_values(filt, 5)
    h = filt.h * math.sqrt(2)
    step = 2 ** 5
    # check phi(x) = sum h_k phi(2x - k) at x with 2x - k on the sampled grid
    for i in range(0, len(c.phi), 7):
        acc = 0.0
        for k in range(len(h)):
            p = 2 * i - k * step
            if 0 <= p < len(c.phi):
                acc += h[k] * c.phi[p]
        assert acc == pytest.approx(c.phi[i], abs=1e-12)


def test_cascade_rejects_negative_depth():
    with pytest.raises(ValidationError):
        cascade_values(WaveletFilter.daubechies(2), -1)


def test_wavelet_norm_zero_and_homogeneous():
    g = Grid(1, None, 6)
    filt = WaveletFilter.daubechies(2)
    params = BesovSeqParams(VE.constant(2), VE.constant(2), VE.constant(0.5), 5)
    W = MatrixWeight.scalar_power(g, 0.3)
    zero = dwt(GridFunction(g, np.zeros(g.shape)), filt)
    assert wavelet_besov_norm(zero, W, params).value == 0
    c = dwt(GridFunction(g, np.sin(2 * np.pi * g.centers()[..., 0])), filt)
    assert wavelet_besov_norm(c.scaled(3.0), W, params).value == pytest.approx(
        3 * wavelet_besov_norm(c, W, params).value, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), name=st.sampled_from(NAMES))
def test_dwt_linear(seed, name):
    g = Grid(1, None, 5)
    rng = np.random.default_rng(seed)
    a, b = (GridFunction(g, rng.standard_normal(g.shape)) for _ in range(2))
    filt = WaveletFilter.daubechies(name)
    lhs = dwt(a * 2.0 + b, filt)
    ca, cb = dwt(a, filt), dwt(b, filt)
    for lam in lhs.seqs:
        assert np.allclose(lhs.seqs[lam].flat(), 2 * ca.seqs[lam].flat() + cb.seqs[lam].flat())
