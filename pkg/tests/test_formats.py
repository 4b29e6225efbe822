import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbesov.almostdiag import AdParams, KernelTable
from vbesov.errors import ValidationError
from vbesov.formats import (COEFF_TAG, MAGIC, atomic_write, coefficients_text, grid_function_bytes,
                            grid_function_from_bytes, kernel_csv, load_grid_function,
                            parse_coefficients, parse_kernel_csv, save_grid_function)
from vbesov.grid import CoefficientSequence, Grid, GridFunction, Lattice
from vbesov.seqspaces import random_sequence
from vbesov.wavelets import WaveletFilter, dwt


@pytest.mark.parametrize("kind,extra", [("scalar", ()), ("vector", (3,)), ("matrix", (2, 2))])
@pytest.mark.parametrize("box", [None, 1])
def test_vbgf_round_trip(kind, extra, box, tmp_path):
    g = Grid(2, box, 3)
    vals = np.random.default_rng(0).standard_normal(g.shape + extra)
    f = GridFunction(g, vals, kind)
    path = tmp_path / "f.vbgf"
    save_grid_function(path, f)
    back = load_grid_function(path)
    assert back.grid == g and back.kind == kind
    assert np.array_equal(back.values, vals)


def test_vbgf_header_layout():
    g = Grid(1, 2, 3)
    data = grid_function_bytes(GridFunction(g, np.arange(g.ncells, dtype=float)))
    assert data[:4] == MAGIC
    assert len(data) == 24 + 8 * g.ncells
    assert int.from_bytes(data[4:6], "little") == 1
    assert data[6] == 1 and data[7] == 0 and data[8] == 0 and data[9] == 1
    assert int.from_bytes(data[12:16], "little", signed=True) == 2
    assert int.from_bytes(data[16:20], "little", signed=True) == 3
    assert np.frombuffer(data[24:32], "<f8")[0] == 0.0 and np.frombuffer(data[-8:], "<f8")[0] == g.ncells - 1


def test_vbgf_complex():
    g = Grid(1, None, 4)
    v = np.arange(16) + 1j * np.arange(16)[::-1]
    back = grid_function_from_bytes(grid_function_bytes(GridFunction(g, v)))
    assert np.array_equal(back.values, v)


def test_vbgf_rejects_corruption(tmp_path):
    g = Grid(1, None, 2)
    data = grid_function_bytes(GridFunction(g, np.ones(4)))
    with pytest.raises(ValidationError):
        grid_function_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValidationError):
        grid_function_from_bytes(data[:-1])
    with pytest.raises(ValidationError):
        grid_function_from_bytes(data[:10])
    with pytest.raises(ValidationError):
        load_grid_function(tmp_path / "missing.vbgf")


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "a.txt", "hello\n")
    atomic_write(tmp_path / "a.txt", "again\n")
    assert (tmp_path / "a.txt").read_text() == "again\n"
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(1, 3), box=st.sampled_from([None, 0, 1]))
def test_coefficients_round_trip(seed, m, box):
    t = random_sequence(2, box, m, 2, seed, density=0.4)
    back = parse_coefficients(coefficients_text(t))
    assert back.j_max == t.j_max and back.box_exp == box and back.m == m
    assert np.array_equal(back.flat(), t.flat())


def test_coefficients_all_entries_and_complex():
    t = CoefficientSequence.zeros(1, None, 1, 2)
    text = coefficients_text(t, all_entries=True)
    assert text.startswith(COEFF_TAG)
    assert len(text.strip().splitlines()) == 3 + 7
    assert len(coefficients_text(t).strip().splitlines()) == 3
    z = random_sequence(1, None, 2, 2, 1) * (1 + 2j)
    assert np.array_equal(parse_coefficients(coefficients_text(z)).flat(), z.flat())


def test_wavelet_set_round_trip():
    g = Grid(2, None, 4)
    c = dwt(GridFunction(g, np.random.default_rng(1).standard_normal(g.shape)),
            WaveletFilter.daubechies(2))
    back = parse_coefficients(coefficients_text(c))
    assert back.filter.name == "db2" and back.j0 == c.j0
    for lam in c.seqs:
        assert np.array_equal(back.seqs[lam].flat(), c.seqs[lam].flat())


def test_coefficients_bad_input():
    with pytest.raises(ValidationError):
        parse_coefficients("nonsense\n")
    t = random_sequence(1, None, 1, 1, 0)
    lines = coefficients_text(t).splitlines()
    lines[-1] += " 7"
    with pytest.raises(ValidationError):
        parse_coefficients("\n".join(lines))


def test_kernel_round_trip():
    lat = Lattice(1, 0, 3)
    B = KernelTable.from_bdef(lat, AdParams(2, 1, 1))
    back = parse_kernel_csv(kernel_csv(B))
    assert back.lattice.size == lat.size
    assert np.array_equal(back.matrix, B.matrix)
    with pytest.raises(ValidationError):
        parse_kernel_csv(kernel_csv(B).replace("q_index,r_index,re,im", "a,b"))
