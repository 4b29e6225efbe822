import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbesov.errors import ValidationError
from vbesov.exponents import (VariableExponent, conjugate, harmonic_mean_exponent,
                              log_holder_constants, two_js_constant)
from vbesov.grid import DyadicCube, Grid


def families():
    g = Grid(1, 1, 6)
    return [VariableExponent.constant(2.0),
            VariableExponent.log_perturbed(2.0, 0.5),
            VariableExponent.bump(1.5, 3.0, 0.0, 0.5),
            VariableExponent.sampled(g, np.linspace(1.2, 3.0, g.cells_per_axis))]


@pytest.mark.parametrize("p", families(), ids=lambda p: p.family)
def test_bounds_hold_on_cells(p):
    v = p.on(Grid(1, 1, 8))
    assert p.p_minus - 1e-12 <= v.min() and v.max() <= p.p_plus + 1e-12


def test_constant_has_zero_constants():
    assert tuple(log_holder_constants(VariableExponent.constant(3.0), 512)) == (0.0, 0.0, 0.0)


def test_cinf_of_log_perturbation():
    r = VariableExponent.log_perturbed(2.0, 1.0)
    est = [log_holder_constants(r, n, seed=4).cinf for n in (64, 1024)]
    # |r(x) - 2| log(e + |x|) = 1 at every point
    assert all(abs(c - 1.0) <= 1e-12 for c in est)


@pytest.mark.parametrize("p", families()[1:], ids=lambda p: p.family)
def test_constants_monotone_in_pair_count(p):
    a = log_holder_constants(p, 256, seed=1, with_infinity=p.r_infinity is not None)
    b = log_holder_constants(p, 2048, seed=1, with_infinity=p.r_infinity is not None)
    assert b.c0 >= a.c0 and b.clog >= a.clog
    if a.cinf is not None:
        assert b.cinf >= a.cinf


def test_cinf_needs_limit():
    g = Grid(1, None, 3)
    with pytest.raises(ValidationError, match="no limit value"):
        log_holder_constants(VariableExponent.sampled(g, np.ones(8) * 2), 16)


@pytest.mark.parametrize("value,want", [(2.0, 2.0), (4.0, 4.0 / 3.0)])
def test_conjugate_constants(value, want):
    c = conjugate(VariableExponent.constant(value))
    assert c.p_minus == pytest.approx(want) and c.p_plus == pytest.approx(want)


def test_conjugate_identity_and_bounds():
    p = VariableExponent.bump(1.5, 3.0)
    c = conjugate(p)
    g = Grid(1, 1, 7)
    assert np.max(np.abs(1 / p.on(g) + 1 / c.on(g) - 1)) <= 1e-15
    assert c.p_minus == pytest.approx(3.0 / 2.0)
    assert c.p_plus == pytest.approx(3.0)


def test_conjugate_rejects_p_minus_one():
    with pytest.raises(ValidationError):
        conjugate(VariableExponent.bump(1.0, 2.0))


def test_harmonic_mean():
    g = Grid(1, None, 1)
    p = VariableExponent.sampled(g, [1.0, 2.0])
    assert harmonic_mean_exponent(p, g) == pytest.approx(4.0 / 3.0)
    assert harmonic_mean_exponent(VariableExponent.constant(2.5), g) == pytest.approx(2.5)
    with pytest.raises(ValidationError):
        harmonic_mean_exponent(p, g, np.zeros(2, bool))


def test_harmonic_mean_is_volume_average():
    g = Grid(1, None, 4)
    p = VariableExponent.sampled(g, np.linspace(1.1, 3.3, 16))
    halves = [harmonic_mean_exponent(p, g, DyadicCube(1, (k,))) for k in (0, 1)]
    assert 1 / harmonic_mean_exponent(p, g) == pytest.approx(np.mean([1 / h for h in halves]))


@settings(max_examples=40, deadline=None)
@given(j=st.integers(0, 6), k=st.integers(-64, 63))
def test_two_js_ratio_bound(j, k):
    p = VariableExponent.log_perturbed(2.0, 0.8)
    g = Grid(1, 1, 9)
    k = max(-(2 ** (j + 1)), min(k, 2 ** (j + 1) - 1))
    Q = DyadicCube(j, (k,))
    v = p.on(g)[g.cube_mask(Q)]
    clog = log_holder_constants(p, 4096, seed=0).clog
    lhs = j * (v.max() - v.min())
    assert lhs <= clog * two_js_constant(1) + 1e-12


def test_derived_operations():
    p = VariableExponent.bump(2.0, 4.0)
    g = Grid(1, 1, 5)
    assert np.allclose(p.scaled(0.5).on(g), 0.5 * p.on(g))
    assert np.allclose(p.reciprocal().on(g), 1 / p.on(g))
    q = VariableExponent.constant(2.0)
    assert np.allclose(p.divide(q).on(g), p.on(g) / 2)
