"""Dyadic cubes, the truncated box mesh, grid functions and coefficient sequences.

The base box is either ``[-2**J, 2**J)**n`` (``box_exp=J``) or the unit cube
``[0, 1)**n`` (``box_exp=None``).  A mesh of level ``L`` splits the box into
cells of side ``2**-L``; every field is piecewise constant on those cells, so
integrals are exact finite sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ValidationError

KINDS = ("scalar", "vector", "matrix")


def _box_lo(box_exp: int | None) -> float:
    return 0.0 if box_exp is None else -(2.0**box_exp)


def _box_side(box_exp: int | None) -> float:
    return 1.0 if box_exp is None else 2.0 ** (box_exp + 1)


def cubes_per_axis(box_exp: int | None, j: int) -> int:
    """Number of level-j dyadic cubes along one axis of the base box."""
    if j < 0:
        raise ValidationError("sequence lattices only use levels j >= 0")
    return int(_box_side(box_exp) * 2**j)


def k_offset(box_exp: int | None, j: int) -> int:
    """Integer index of the first level-j cube along an axis."""
    return int(_box_lo(box_exp) * 2**j)


@dataclass(frozen=True)
class Cube:
    """Axis-parallel cube ``lower + [0, side)**n`` (used for dilates)."""

    lower: tuple
    side: float

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.lower, float) + self.side / 2

    @property
    def volume(self) -> float:
        return self.side**self.n

    def dilate(self, lam: float) -> "Cube":
        c = self.center
        s = lam * self.side
        return Cube(tuple(float(v) for v in c - s / 2), float(s))

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        lo = np.asarray(self.lower)
        return bool(np.all(x >= lo) and np.all(x < lo + self.side))


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Q = 2**-j ([0,1)**n + k)."""

    j: int
    k: tuple

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in np.atleast_1d(self.k)))
        object.__setattr__(self, "j", int(self.j))

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.j)

    @property
    def volume(self) -> float:
        return self.side**self.n

    @property
    def lower(self) -> tuple:
        return tuple(self.side * v for v in self.k)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.k, float) + 0.5) * self.side

    def as_cube(self) -> Cube:
        return Cube(self.lower, self.side)

    def dilate(self, lam: float) -> Cube:
        return self.as_cube().dilate(lam)

    def children(self) -> list["DyadicCube"]:
        base = 2 * np.asarray(self.k)
        return [DyadicCube(self.j + 1, tuple(base + np.asarray(e)))
                for e in product((0, 1), repeat=self.n)]

    def parent(self) -> "DyadicCube":
        if self.j <= 0:
            raise ValidationError("level-0 cubes have no parent in the lattice")
        return DyadicCube(self.j - 1, tuple(v // 2 for v in self.k))

    def contains(self, x) -> bool:
        return self.as_cube().contains(x)

    def contains_cube(self, other: "DyadicCube") -> bool:
        if other.j < self.j:
            return False
        shift = other.j - self.j
        return tuple(v >> shift for v in other.k) == self.k


def cube_of_point(x, j: int, box_exp: int | None = None) -> DyadicCube:
    """The unique level-j cube containing x (x must lie in the base box)."""
    x = np.atleast_1d(np.asarray(x, float))
    lo, side = _box_lo(box_exp), _box_side(box_exp)
    if np.any(x < lo) or np.any(x >= lo + side):
        raise ValidationError(f"point {x.tolist()} lies outside the base box")
    return DyadicCube(j, tuple(np.floor(x * 2.0**j).astype(int)))


def lattice_nav(Q: DyadicCube, request: str, x=None, j: int | None = None,
                box_exp: int | None = None):
    """Dispatch helper: ``children``, ``parent`` or ``cube_of_point``."""
    if request == "children":
        return Q.children()
    if request == "parent":
        return Q.parent()
    if request == "cube_of_point":
        return cube_of_point(x, Q.j if j is None else j, box_exp)
    raise ValidationError(f"unknown lattice request {request!r}")


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of level ``level`` on the base box."""

    n: int
    box_exp: int | None
    level: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("dimension n must be >= 1")
        if self.level < 0:
            raise ValidationError("mesh level must be >= 0")

    @property
    def lo(self) -> float:
        return _box_lo(self.box_exp)

    @property
    def side(self) -> float:
        return _box_side(self.box_exp)

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def cells_per_axis(self) -> int:
        return int(self.side * 2**self.level)

    @property
    def shape(self) -> tuple:
        return (self.cells_per_axis,) * self.n

    @property
    def ncells(self) -> int:
        return self.cells_per_axis**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def axis_centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.cells_per_axis) + 0.5) * self.h

    def axis_nodes(self) -> np.ndarray:
        return self.lo + np.arange(self.cells_per_axis) * self.h

    def _mesh(self, ax: np.ndarray) -> np.ndarray:
        return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), axis=-1)

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``shape + (n,)``."""
        return self._mesh(self.axis_centers())

    def nodes(self) -> np.ndarray:
        """Cell lower corners, shape ``shape + (n,)``."""
        return self._mesh(self.axis_nodes())

    def same_box(self, other: "Grid") -> bool:
        return self.n == other.n and self.box_exp == other.box_exp

    def refine(self, extra: int = 1) -> "Grid":
        return Grid(self.n, self.box_exp, self.level + extra)

    def cube_slices(self, cube) -> tuple:
        """Index slices of the cells making up an aligned cube."""
        lower = np.atleast_1d(np.asarray(cube.lower, float))
        if lower.size != self.n:
            raise ValidationError("cube dimension does not match grid")
        start = (lower - self.lo) / self.h
        width = cube.side / self.h
        if (not np.allclose(start, np.round(start), atol=1e-9)
                or abs(width - round(width)) > 1e-9 or round(width) < 1):
            raise ValidationError("cube is not aligned with the mesh cells")
        start = np.round(start).astype(int)
        width = int(round(width))
        if np.any(start < 0) or np.any(start + width > self.cells_per_axis):
            raise ValidationError("cube escapes the base box")
        return tuple(slice(s, s + width) for s in start)

    def fits(self, cube) -> bool:
        try:
            self.cube_slices(cube)
        except ValidationError:
            return False
        return True

    def cube_mask(self, cube) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        mask[self.cube_slices(cube)] = True
        return mask

    def cell_index(self, x) -> tuple:
        x = np.atleast_1d(np.asarray(x, float))
        idx = np.floor((x - self.lo) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.cells_per_axis):
            raise ValidationError(f"point {x.tolist()} lies outside the base box")
        return tuple(idx)

    def cubes(self, j: int) -> Iterator[DyadicCube]:
        c, off = cubes_per_axis(self.box_exp, j), k_offset(self.box_exp, j)
        for idx in product(range(c), repeat=self.n):
            yield DyadicCube(j, tuple(off + i for i in idx))

    def _check_level(self, j: int):
        if j > self.level:
            raise ValidationError(f"mesh level {self.level} is coarser than level {j}")
        if j < 0:
            raise ValidationError("level must be >= 0")

    def blocks(self, arr: np.ndarray, j: int) -> np.ndarray:
        """Regroup a cell array ``shape + tail`` as ``(ncubes_j, cells_per_cube) + tail``.

        Cubes are in C order of their index vectors, cells in C order inside.
        """
        self._check_level(j)
        c = cubes_per_axis(self.box_exp, j)
        r = 2 ** (self.level - j)
        n = self.n
        tail = arr.shape[n:]
        a = arr.reshape(sum(((c, r) for _ in range(n)), ()) + tail)
        order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
        order += list(range(2 * n, 2 * n + len(tail)))
        return a.transpose(order).reshape((c**n, r**n) + tail)

    def unblocks(self, arr: np.ndarray, j: int) -> np.ndarray:
        """Inverse of :meth:`blocks`."""
        self._check_level(j)
        c = cubes_per_axis(self.box_exp, j)
        r = 2 ** (self.level - j)
        n = self.n
        tail = arr.shape[2:]
        a = arr.reshape((c,) * n + (r,) * n + tail)
        order = []
        for i in range(n):
            order += [i, n + i]
        order += list(range(2 * n, 2 * n + len(tail)))
        return a.transpose(order).reshape(self.shape + tail)

    def expand_level(self, arr: np.ndarray, j: int) -> np.ndarray:
        """Broadcast a per-cube array ``(c,)*n + tail`` to cells."""
        self._check_level(j)
        r = 2 ** (self.level - j)
        for ax in range(self.n):
            arr = np.repeat(arr, r, axis=ax)
        return arr


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant field on a mesh: scalar, C^m vector, or m x m matrix."""

    grid: Grid
    values: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown value kind {self.kind!r}")
        v = np.asarray(self.values)
        if not np.iscomplexobj(v):
            v = v.astype(float)
        extra = {"scalar": 0, "vector": 1, "matrix": 2}[self.kind]
        if v.shape[: self.grid.n] != self.grid.shape or v.ndim != self.grid.n + extra:
            raise ValidationError(
                f"values of shape {v.shape} do not fit a {self.kind} field on {self.grid.shape}")
        if self.kind == "matrix" and v.shape[-1] != v.shape[-2]:
            raise ValidationError("matrix fields need square values")
        if not np.all(np.isfinite(v)):
            raise ValidationError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return 1 if self.kind == "scalar" else self.values.shape[-1]

    @classmethod
    def from_callable(cls, grid: Grid, fn, kind: str = "scalar") -> "GridFunction":
        return cls(grid, fn(grid.centers()), kind)

    @classmethod
    def indicator(cls, grid: Grid, cube) -> "GridFunction":
        return cls(grid, grid.cube_mask(cube).astype(float))

    def _like(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.kind)

    def _check(self, other: "GridFunction"):
        if other.grid != self.grid or other.kind != self.kind:
            raise ValidationError("grid functions live on different meshes or kinds")

    def __add__(self, other):
        self._check(other)
        return self._like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.values - other.values)

    def __mul__(self, c):
        return self._like(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    def pointwise_abs(self) -> "GridFunction":
        """Scalar field |f| (Euclidean length for vectors)."""
        if self.kind == "scalar":
            return GridFunction(self.grid, np.abs(self.values))
        if self.kind == "vector":
            return GridFunction(self.grid, np.linalg.norm(self.values, axis=-1))
        raise ValidationError("pointwise_abs is for scalar or vector fields")

    def component(self, i: int) -> "GridFunction":
        if self.kind != "vector":
            raise ValidationError("component() needs a vector field")
        return GridFunction(self.grid, self.values[..., i])

    def as_vector(self) -> "GridFunction":
        if self.kind == "vector":
            return self
        if self.kind == "scalar":
            return GridFunction(self.grid, self.values[..., None], "vector")
        raise ValidationError("matrix fields cannot be viewed as vectors")


def integrate(f: GridFunction, E=None):
    """Exact integral of f over E (whole box, aligned cube, cube list or cell mask)."""
    vol = f.grid.cell_volume
    v = f.values
    n = f.grid.n
    if E is None:
        return v.sum(axis=tuple(range(n))) * vol
    if isinstance(E, np.ndarray):
        if E.shape != f.grid.shape or E.dtype != bool:
            raise ValidationError("cell mask must be a boolean array of the grid shape")
        return v[E].sum(axis=0) * vol
    if isinstance(E, (Cube, DyadicCube)):
        return v[f.grid.cube_slices(E)].sum(axis=tuple(range(n))) * vol
    if isinstance(E, Iterable):
        mask = np.zeros(f.grid.shape, bool)
        for cube in E:
            mask[f.grid.cube_slices(cube)] = True
        return integrate(f, mask)
    raise ValidationError("unsupported integration set")


@dataclass(frozen=True, eq=False)
class CoefficientSequence:
    """Finitely supported map Q -> C^m over levels 0..j_max of the base box.

    ``levels[j]`` is a dense array of shape ``(c_j,)*n + (m,)`` where
    ``c_j`` is the number of level-j cubes per axis; position ``i`` along an
    axis corresponds to cube index ``k = i + k_offset(j)``.
    """

    n: int
    box_exp: int | None
    m: int
    levels: tuple = field(default=())

    def __post_init__(self):
        lv = []
        for j, a in enumerate(self.levels):
            a = np.asarray(a)
            if not np.iscomplexobj(a):
                a = a.astype(float)
            want = (cubes_per_axis(self.box_exp, j),) * self.n + (self.m,)
            if a.shape != want:
                raise ValidationError(f"level {j} has shape {a.shape}, expected {want}")
            if not np.all(np.isfinite(a)):
                raise ValidationError("coefficients must be finite")
            a.setflags(write=False)
            lv.append(a)
        object.__setattr__(self, "levels", tuple(lv))

    @property
    def j_max(self) -> int:
        return len(self.levels) - 1

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(a) for a in self.levels)

    @classmethod
    def zeros(cls, n, box_exp, m, j_max, dtype=float) -> "CoefficientSequence":
        return cls(n, box_exp, m, tuple(
            np.zeros((cubes_per_axis(box_exp, j),) * n + (m,), dtype) for j in range(j_max + 1)))

    @classmethod
    def from_dict(cls, entries: dict, n, box_exp, m, j_max=None) -> "CoefficientSequence":
        if j_max is None:
            j_max = max((Q.j for Q in entries), default=0)
        cplx = any(np.iscomplexobj(np.asarray(v)) for v in entries.values())
        arrs = [np.zeros((cubes_per_axis(box_exp, j),) * n + (m,), complex if cplx else float)
                for j in range(j_max + 1)]
        for Q, v in entries.items():
            arrs[Q.j][cls._pos(Q, n, box_exp, j_max)] = np.broadcast_to(np.asarray(v), (m,))
        return cls(n, box_exp, m, tuple(arrs))

    @staticmethod
    def _pos(Q: DyadicCube, n, box_exp, j_max) -> tuple:
        if Q.n != n:
            raise ValidationError("cube dimension does not match the sequence")
        if Q.j < 0 or Q.j > j_max:
            raise ValidationError(f"cube level {Q.j} outside 0..{j_max}")
        c, off = cubes_per_axis(box_exp, Q.j), k_offset(box_exp, Q.j)
        idx = tuple(k - off for k in Q.k)
        if any(i < 0 or i >= c for i in idx):
            raise ValidationError(f"cube {Q} lies outside the base box")
        return idx

    def __getitem__(self, Q: DyadicCube) -> np.ndarray:
        return self.levels[Q.j][self._pos(Q, self.n, self.box_exp, self.j_max)]

    def level(self, j: int) -> np.ndarray:
        return self.levels[j]

    def with_value(self, Q: DyadicCube, v) -> "CoefficientSequence":
        arrs = [a.copy() for a in self.levels]
        v = np.broadcast_to(np.asarray(v), (self.m,))
        if np.iscomplexobj(v) and not np.iscomplexobj(arrs[Q.j]):
            arrs = [a.astype(complex) for a in arrs]
        arrs[Q.j][self._pos(Q, self.n, self.box_exp, self.j_max)] = v
        return CoefficientSequence(self.n, self.box_exp, self.m, tuple(arrs))

    def items(self) -> Iterator[tuple[DyadicCube, np.ndarray]]:
        """Nonzero entries in level-major, C-index order."""
        for j, a in enumerate(self.levels):
            off = k_offset(self.box_exp, j)
            nz = np.argwhere(np.any(a != 0, axis=-1))
            for idx in nz:
                yield DyadicCube(j, tuple(int(i) + off for i in idx)), a[tuple(idx)]

    def nnz(self) -> int:
        return int(sum(np.count_nonzero(np.any(a != 0, axis=-1)) for a in self.levels))

    def map(self, fn) -> "CoefficientSequence":
        out = tuple(fn(a) for a in self.levels)
        m = out[0].shape[-1] if out else self.m
        return CoefficientSequence(self.n, self.box_exp, m, out)

    def _check(self, other):
        if (other.n, other.box_exp, other.m, other.j_max) != (self.n, self.box_exp, self.m, self.j_max):
            raise ValidationError("sequences have different lattices")

    def __add__(self, other):
        self._check(other)
        return CoefficientSequence(self.n, self.box_exp, self.m,
                                   tuple(a + b for a, b in zip(self.levels, other.levels)))

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return self.map(lambda a: a * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def magnitudes(self) -> "CoefficientSequence":
        """Scalar (m=1) sequence of Euclidean lengths |t_Q|."""
        return self.map(lambda a: np.linalg.norm(a, axis=-1, keepdims=True))

    def resized(self, j_max: int) -> "CoefficientSequence":
        """Truncate or zero-pad to levels 0..j_max."""
        if j_max <= self.j_max:
            return CoefficientSequence(self.n, self.box_exp, self.m, self.levels[: j_max + 1])
        dt = complex if self.is_complex else float
        pad = CoefficientSequence.zeros(self.n, self.box_exp, self.m, j_max, dt).levels
        return CoefficientSequence(self.n, self.box_exp, self.m, self.levels + pad[self.j_max + 1:])

    def flat(self) -> np.ndarray:
        """Concatenate levels in lattice order, shape ``(N, m)``."""
        return np.concatenate([a.reshape(-1, self.m) for a in self.levels], axis=0)

    @classmethod
    def from_flat(cls, arr, n, box_exp, m, j_max) -> "CoefficientSequence":
        arr = np.asarray(arr).reshape(-1, m)
        out, pos = [], 0
        for j in range(j_max + 1):
            c = cubes_per_axis(box_exp, j)
            out.append(arr[pos: pos + c**n].reshape((c,) * n + (m,)))
            pos += c**n
        if pos != arr.shape[0]:
            raise ValidationError("flat array length does not match the lattice")
        return cls(n, box_exp, m, tuple(out))

    def allclose(self, other, rtol=0.0, atol=1e-12) -> bool:
        self._check(other)
        return all(np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(self.levels, other.levels))


@dataclass(frozen=True)
class Lattice:
    """Flat enumeration of all cubes of levels 0..j_max in the base box."""

    n: int
    box_exp: int | None
    j_max: int

    def level_slices(self) -> list[slice]:
        out, pos = [], 0
        for j in range(self.j_max + 1):
            c = cubes_per_axis(self.box_exp, j) ** self.n
            out.append(slice(pos, pos + c))
            pos += c
        return out

    @property
    def size(self) -> int:
        return self.level_slices()[-1].stop

    def level_indices(self, j: int) -> np.ndarray:
        """Integer k vectors of level j in lattice order, shape (c**n, n)."""
        c, off = cubes_per_axis(self.box_exp, j), k_offset(self.box_exp, j)
        ax = np.arange(c) + off
        return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), -1).reshape(-1, self.n)

    def level_centers(self, j: int) -> np.ndarray:
        return (self.level_indices(j) + 0.5) * 2.0 ** (-j)

    def arrays(self):
        """(levels, k, centers, sides) for every cube in lattice order."""
        lev, ks, cen = [], [], []
        for j in range(self.j_max + 1):
            k = self.level_indices(j)
            lev.append(np.full(len(k), j))
            ks.append(k)
            cen.append((k + 0.5) * 2.0 ** (-j))
        lev = np.concatenate(lev)
        return lev, np.concatenate(ks), np.concatenate(cen), 2.0 ** (-lev.astype(float))

    def cube(self, idx: int) -> DyadicCube:
        for j, sl in enumerate(self.level_slices()):
            if sl.start <= idx < sl.stop:
                return DyadicCube(j, tuple(self.level_indices(j)[idx - sl.start]))
        raise ValidationError(f"lattice index {idx} out of range")

    def index(self, Q: DyadicCube) -> int:
        c, off = cubes_per_axis(self.box_exp, Q.j), k_offset(self.box_exp, Q.j)
        pos = 0
        for i in (np.asarray(Q.k) - off):
            if i < 0 or i >= c:
                raise ValidationError(f"cube {Q} lies outside the base box")
            pos = pos * c + int(i)
        return self.level_slices()[Q.j].start + pos


def level_field(t: CoefficientSequence, j: int, grid: Grid) -> GridFunction:
    """t_j = sum over level-j cubes of t_Q |Q|^{-1/2} 1_Q, as a vector field."""
    if grid.n != t.n or grid.box_exp != t.box_exp:
        raise ValidationError("sequence and grid use different base boxes")
    if j > t.j_max:
        return GridFunction(grid, np.zeros(grid.shape + (t.m,)), "vector")
    vals = grid.expand_level(t.levels[j], j) * 2.0 ** (j * grid.n / 2)
    return GridFunction(grid, vals, "vector")


def level_matrix_field(levels: Sequence[np.ndarray], j: int, grid: Grid) -> GridFunction:
    """A_j = sum over level-j cubes of A_Q 1_Q from per-cube matrices."""
    return GridFunction(grid, grid.expand_level(np.asarray(levels[j]), j), "matrix")
