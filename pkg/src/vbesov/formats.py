"""File formats: VBGF binary grid functions, coefficient text files, kernel CSV tables.

VBGF layout (little endian, 24-byte header, then the values in C order):

    offset size type     field
    0      4    bytes    magic b"VBGF"
    4      2    uint16   format version (1)
    6      1    uint8    n, the space dimension
    7      1    uint8    kind: 0 scalar, 1 vector, 2 matrix
    8      1    uint8    dtype: 0 float64, 1 complex128 (real, imag interleaved)
    9      1    uint8    box flag: 0 unit box [0,1)^n, 1 box [-2^J, 2^J)^n
    10     2    uint16   reserved, 0
    12     4    int32    J_box (0 when the box flag is 0)
    16     4    int32    L, the mesh level (cells of side 2^-L)
    20     4    uint32   m (1 for scalar fields)

The payload holds cells^n scalars, cells^n * m vectors or cells^n * m * m
matrices, with the last axes fastest.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile

import numpy as np

from .almostdiag import KernelTable
from .errors import ValidationError
from .grid import CoefficientSequence, DyadicCube, Grid, GridFunction, KINDS, Lattice, k_offset
from .wavelets import WaveletCoeffSet, WaveletFilter

MAGIC = b"VBGF"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBBHiiI")
COEFF_TAG = "# vbesov-coefficients v1"
KERNEL_TAG = "# vbesov-kernel v1"


def atomic_write(path, data) -> None:
    """Write bytes or text to a sibling temp file, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- binary grid functions
def grid_function_bytes(f: GridFunction) -> bytes:
    g = f.grid
    cplx = np.iscomplexobj(f.values)
    head = _HEADER.pack(MAGIC, VERSION, g.n, KINDS.index(f.kind), int(cplx),
                        0 if g.box_exp is None else 1, 0,
                        0 if g.box_exp is None else g.box_exp, g.level, f.m)
    body = np.ascontiguousarray(f.values, "<c16" if cplx else "<f8").tobytes()
    return head + body


def grid_function_from_bytes(data: bytes) -> GridFunction:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated VBGF header")
    magic, ver, n, kind, dt, boxf, _, jbox, level, m = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError("not a VBGF file")
    if ver != VERSION:
        raise ValidationError(f"unsupported VBGF version {ver}")
    if kind >= len(KINDS) or dt > 1 or boxf > 1:
        raise ValidationError("corrupt VBGF header")
    grid = Grid(n, jbox if boxf else None, level)
    kind_s = KINDS[kind]
    shape = grid.shape + {"scalar": (), "vector": (m,), "matrix": (m, m)}[kind_s]
    dtype = np.dtype("<c16" if dt else "<f8")
    want = int(np.prod(shape)) * dtype.itemsize
    if len(data) - _HEADER.size != want:
        raise ValidationError(f"VBGF payload has {len(data) - _HEADER.size} bytes, expected {want}")
    vals = np.frombuffer(data, dtype, offset=_HEADER.size).reshape(shape)
    return GridFunction(grid, vals.astype(complex if dt else float), kind_s)


def save_grid_function(path, f: GridFunction) -> None:
    atomic_write(path, grid_function_bytes(f))


def load_grid_function(path) -> GridFunction:
    try:
        with open(path, "rb") as fh:
            return grid_function_from_bytes(fh.read())
    except OSError as e:
        raise ValidationError(f"cannot read grid function {path}: {e}") from None


# ---------------------------------------------------------------- coefficient text files
def _num(x: float) -> str:
    return repr(float(x))


def _lam_str(lam) -> str:
    return "-" if lam is None else "".join(str(int(b)) for b in lam)


def _entries(s: CoefficientSequence, all_entries: bool):
    if not all_entries:
        yield from s.items()
        return
    for j, a in enumerate(s.levels):
        off = k_offset(s.box_exp, j)
        for idx in np.ndindex(a.shape[:-1]):
            yield DyadicCube(j, tuple(i + off for i in idx)), a[idx]


def coefficients_text(seqs, header: dict | None = None, all_entries: bool = False) -> str:
    """Rows ``lam j k_1..k_n re_1 im_1 .. re_m im_m`` for the nonzero entries.

    ``seqs`` is a CoefficientSequence (lam column ``-``) or a WaveletCoeffSet.
    """
    meta = dict(header or {})
    if isinstance(seqs, WaveletCoeffSet):
        items = sorted(seqs.seqs.items())
        meta.update(filter=seqs.filter.name, j0=seqs.j0, level=seqs.grid.level,
                    tops=",".join(f"{_lam_str(l)}:{s.j_max}" for l, s in items))
    else:
        items = [(None, seqs)]
    first = items[0][1]
    n, m, box = first.n, first.m, first.box_exp
    meta = {"n": n, "box": "unit" if box is None else box, "m": m,
            "j_max": max(s.j_max for _, s in items), **meta}
    out = io.StringIO()
    out.write(COEFF_TAG + "\n")
    out.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    cols = ["lam", "j"] + [f"k{i + 1}" for i in range(n)]
    cols += [f"{p}{i + 1}" for i in range(m) for p in ("re", "im")]
    out.write(" ".join(cols) + "\n")
    for lam, s in items:
        for Q, v in _entries(s, all_entries):
            nums = [_num(x) for z in np.asarray(v, complex) for x in (z.real, z.imag)]
            out.write(" ".join([_lam_str(lam), str(Q.j)] + [str(k) for k in Q.k] + nums) + "\n")
    return out.getvalue()


def _parse_header(lines, tag: str) -> tuple[dict, list[str]]:
    if not lines or lines[0].strip() != tag:
        raise ValidationError(f"missing header line {tag!r}")
    meta = {}
    for tok in lines[1].lstrip("#").split():
        k, _, v = tok.partition("=")
        meta[k] = v
    return meta, lines[2:]


def parse_coefficients(text: str, filters: dict | None = None):
    """Inverse of :func:`coefficients_text`. Returns a CoefficientSequence or a WaveletCoeffSet."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    meta, rest = _parse_header(lines, COEFF_TAG)
    try:
        n, m, j_max = int(meta["n"]), int(meta["m"]), int(meta["j_max"])
        box = None if meta["box"] == "unit" else int(meta["box"])
    except (KeyError, ValueError) as e:
        raise ValidationError(f"bad coefficient header: {e}") from None
    entries: dict = {}
    for ln in rest[1:]:
        tok = ln.split()
        if len(tok) != 2 + n + 2 * m:
            raise ValidationError(f"coefficient row has {len(tok)} fields, expected {2 + n + 2 * m}")
        lam = None if tok[0] == "-" else tuple(int(c) for c in tok[0])
        Q = DyadicCube(int(tok[1]), tuple(int(x) for x in tok[2:2 + n]))
        vals = np.array([float(x) for x in tok[2 + n:]])
        v = vals[0::2] + 1j * vals[1::2]
        entries.setdefault(lam, {})[Q] = v if np.any(v.imag) else v.real
    if "filter" not in meta:
        return CoefficientSequence.from_dict(entries.get(None, {}), n, box, m, j_max)
    filt = (filters or {}).get(meta["filter"]) or filter_by_name(meta["filter"])
    try:
        tops = {tuple(int(c) for c in a): int(b)
                for a, b in (t.split(":") for t in meta["tops"].split(","))}
        j0, level = int(meta["j0"]), int(meta["level"])
    except (KeyError, ValueError) as e:
        raise ValidationError(f"bad coefficient header: {e}") from None
    seqs = {lam: CoefficientSequence.from_dict(entries.get(lam, {}), n, box, m, top)
            for lam, top in tops.items()}
    return WaveletCoeffSet(filt, Grid(n, box, level), j0, seqs)


# ---------------------------------------------------------------- kernel tables
def kernel_csv(kernel: KernelTable) -> str:
    """``q_index,r_index,re,im`` rows over nonzero entries; indices follow Lattice order
    (levels ascending, then k in C order within a level)."""
    lat = kernel.lattice
    out = io.StringIO()
    out.write(KERNEL_TAG + "\n")
    out.write(f"# n={lat.n} box={'unit' if lat.box_exp is None else lat.box_exp} "
              f"j_max={lat.j_max}\n")
    out.write("q_index,r_index,re,im\n")
    M = np.asarray(kernel.matrix, complex)
    for a, b in zip(*np.nonzero(M)):
        z = M[a, b]
        out.write(f"{a},{b},{_num(z.real)},{_num(z.imag)}\n")
    return out.getvalue()


def parse_kernel_csv(text: str) -> KernelTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    meta, rest = _parse_header(lines, KERNEL_TAG)
    try:
        lat = Lattice(int(meta["n"]), None if meta["box"] == "unit" else int(meta["box"]),
                      int(meta["j_max"]))
    except (KeyError, ValueError) as e:
        raise ValidationError(f"bad kernel header: {e}") from None
    if not rest or rest[0].strip() != "q_index,r_index,re,im":
        raise ValidationError("missing kernel column header")
    M = np.zeros((lat.size, lat.size), complex)
    for ln in rest[1:]:
        try:
            a, b, re, im = ln.split(",")
            M[int(a), int(b)] = float(re) + 1j * float(im)
        except (ValueError, IndexError):
            raise ValidationError(f"bad kernel row {ln!r}") from None
    return KernelTable(lat, M if np.any(M.imag) else M.real)


def filter_by_name(name: str) -> WaveletFilter:
    return WaveletFilter.daubechies(name)
