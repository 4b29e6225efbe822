"""Batch experiment runner: ``vbesov <command> --config cfg.json --out DIR``.

A config is a JSON object with ``schema_version`` 1, optional named
declarations (grids, exponents, weights, functions, sequences, kernels,
filters) and a ``params`` object read by the command.  Parameters refer to
declarations by name or give an inline declaration.  Every command writes
``<command>.csv`` (plus extra tables and data files) and ``summary.txt``
into the output directory.  Nothing is written when validation fails.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .almostdiag import (AdParams, KernelTable, SpaceIndexData, Truncation, ad_condition_check,
                         apply_almost_diagonal, czo_condition_check, empirical_operator_norm,
                         molecule_condition_check)
from .errors import NumericalFailure, ValidationError
from .exponents import VariableExponent, conjugate
from .grid import CoefficientSequence, DyadicCube, Grid, GridFunction, Lattice
from .lpgrid import PROFILES, inverse_phi_transform, make_admissible_pair, phi_transform
from .molecules import MoleculeParams, atom_molecule_constant, make_atom, molecule_check, \
    pairing_table
from .seqspaces import BesovSeqParams, besov_seq_norm_A, besov_seq_norm_W, random_sequence
from .trace import TraceGeometry, extend_coeffs, s_constraint, trace_compatibility, trace_coeffs
from .varleb import mixed_norm, norm
from .wavelets import WaveletFilter, dwt, idwt
from .weights import MatrixWeight, apinfty_characteristic, estimate_dimensions, reducing_family

SCHEMA_VERSION = 1
COMMANDS = ("norm", "mixed-norm", "weight-char", "reduce", "dims", "seqnorm", "ad-apply",
            "ad-check", "ad-bound", "czo-check", "mol-check", "mol-pair", "phi", "wavelet",
            "trace", "extend", "trace-check", "suite")
SECTIONS = ("grids", "exponents", "weights", "functions", "sequences", "kernels", "filters")
TOP_KEYS = {"schema_version", "experiment", "seed", "tol", "params", "description", *SECTIONS}


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class Result:
    columns: list
    rows: list
    summary: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)   # suffix -> (columns, rows)
    files: dict = field(default_factory=dict)    # file name -> str or bytes

    def csv(self, columns=None, rows=None) -> str:
        columns = self.columns if columns is None else columns
        rows = self.rows if rows is None else rows
        out = io.StringIO()
        out.write(",".join(columns) + "\n")
        for r in rows:
            if len(r) != len(columns):
                raise AssertionError("row width differs from the declared columns")
            out.write(",".join(_num(v) for v in r) + "\n")
        return out.getvalue()


def _req(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise ValidationError(f"{where} must be an object")
    if key not in d:
        raise ValidationError(f"{where} is missing {key!r}")
    return d[key]


def _num_param(d: dict, key: str, where: str, default=None, kind=float):
    v = d.get(key, default) if default is not None or key in d else _req(d, key, where)
    try:
        return kind(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}.{key} must be a number") from None


# ---------------------------------------------------------------- config resolution
class Context:
    """Resolves named or inline declarations of a validated config, with caching."""

    def __init__(self, config: dict, seed: int, tol: float, threads: int, base_dir: str = "."):
        self.config = config
        self.seed = seed
        self.tol = tol
        self.threads = threads
        self.base_dir = base_dir
        self._cache: dict = {}

    def _decl(self, section: str, ref):
        if isinstance(ref, dict):
            return ref, None
        if not isinstance(ref, str):
            raise ValidationError(f"{section} reference must be a name or an object, got {ref!r}")
        decls = self.config.get(section, {})
        if ref not in decls:
            raise ValidationError(f"unknown {section[:-1]} {ref!r}")
        return decls[ref], (section, ref)

    def _cached(self, section, ref, build):
        spec, key = self._decl(section, ref)
        if key is not None and key in self._cache:
            return self._cache[key]
        obj = build(spec)
        if key is not None:
            self._cache[key] = obj
        return obj

    def path(self, p) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    # grids ---------------------------------------------------------
    def grid(self, ref) -> Grid:
        def build(s):
            where = "grid"
            return Grid(_num_param(s, "n", where, kind=int), s.get("box_exp"),
                        _num_param(s, "level", where, kind=int))
        return self._cached("grids", ref, build)

    # exponents -----------------------------------------------------
    def exponent(self, ref) -> VariableExponent:
        if isinstance(ref, (int, float)) and not isinstance(ref, bool):
            return VariableExponent.constant(float(ref))
        return self._cached("exponents", ref, self._build_exponent)

    def _build_exponent(self, s) -> VariableExponent:
        fam = _req(s, "family", "exponent")
        w = f"exponent[{fam}]"
        if fam == "constant":
            return VariableExponent.constant(_num_param(s, "value", w))
        if fam == "log_perturbed":
            return VariableExponent.log_perturbed(_num_param(s, "r_inf", w), _num_param(s, "c", w),
                                                  s.get("axes"))
        if fam == "bump":
            return VariableExponent.bump(_num_param(s, "lo", w), _num_param(s, "hi", w),
                                         s.get("center", 0.0), s.get("width", 1.0), s.get("axes"))
        if fam == "sampled":
            f = formats.load_grid_function(self.path(_req(s, "path", w)))
            return VariableExponent.sampled(f.grid, f.values, s.get("r_infinity"))
        if fam == "derived":
            base = self.exponent(_req(s, "base", w))
            op = _req(s, "op", w)
            if op == "scaled":
                return base.scaled(_num_param(s, "r", w))
            if op == "reciprocal":
                return base.reciprocal()
            if op == "conjugate":
                return conjugate(base)
            if op == "divide":
                return base.divide(self.exponent(_req(s, "other", w)))
            raise ValidationError(f"unknown derived exponent op {op!r}")
        raise ValidationError(f"unknown exponent family {fam!r}")

    # weights -------------------------------------------------------
    def weight(self, ref) -> MatrixWeight:
        return self._cached("weights", ref, self._build_weight)

    def _build_weight(self, s) -> MatrixWeight:
        fam = _req(s, "family", "weight")
        w = f"weight[{fam}]"
        if fam == "sampled":
            f = formats.load_grid_function(self.path(_req(s, "path", w)))
            vals = f.values if f.kind == "matrix" else f.values[..., None, None]
            return MatrixWeight.sampled(f.grid, vals)
        g = self.grid(_req(s, "grid", w))
        axes = s.get("axes")
        if fam == "identity":
            return MatrixWeight.identity(g, int(s.get("m", 1)))
        if fam == "constant":
            return MatrixWeight.constant(g, np.asarray(_req(s, "matrix", w), float))
        if fam == "scalar_power":
            return MatrixWeight.scalar_power(g, _num_param(s, "a", w), axes)
        if fam == "diagonal_power":
            return MatrixWeight.diagonal_power(g, _req(s, "a", w), axes)
        if fam == "rotated_diagonal":
            return MatrixWeight.rotated_diagonal(g, _req(s, "a", w), s.get("rotation", np.pi / 6),
                                                 axes)
        raise ValidationError(f"unknown weight family {fam!r}")

    # functions -----------------------------------------------------
    def function(self, ref) -> GridFunction:
        return self._cached("functions", ref, self._build_function)

    def _build_function(self, s) -> GridFunction:
        fam = _req(s, "family", "function")
        w = f"function[{fam}]"
        if fam == "file":
            return formats.load_grid_function(self.path(_req(s, "path", w)))
        g = self.grid(_req(s, "grid", w))
        if fam == "indicator":
            return GridFunction.indicator(g, cube_from(_req(s, "cube", w)))
        if fam == "constant":
            return GridFunction(g, np.full(g.shape, _num_param(s, "value", w)))
        if fam == "gaussian":
            c = np.asarray(s.get("center", 0.0), float)
            width = _num_param(s, "width", w, 1.0)
            r2 = np.sum((g.centers() - c) ** 2, axis=-1)
            return GridFunction(g, np.exp(-r2 / width**2))
        if fam == "random":
            m = int(s.get("m", 1))
            rng = np.random.default_rng([self.seed, int(s.get("trial", 0))])
            shape = g.shape + ((m,) if m > 1 else ())
            return GridFunction(g, rng.standard_normal(shape), "vector" if m > 1 else "scalar")
        if fam == "bandlimited":
            # sum of cosines with integer frequencies up to ``max_freq`` per axis
            kmax = _num_param(s, "max_freq", w, kind=int)
            rng = np.random.default_rng([self.seed, int(s.get("trial", 0))])
            x = g.centers()
            v = np.zeros(g.shape)
            for _ in range(int(s.get("terms", 4))):
                kv = rng.integers(-kmax, kmax + 1, g.n)
                v += rng.standard_normal() * np.cos(2 * np.pi / g.side * (x @ kv) + rng.uniform(0, 6))
            return GridFunction(g, v)
        raise ValidationError(f"unknown function family {fam!r}")

    # sequences -----------------------------------------------------
    def sequence(self, ref, trial: int = 0) -> CoefficientSequence:
        spec, _ = self._decl("sequences", ref)
        fam = _req(spec, "family", "sequence")
        w = f"sequence[{fam}]"
        if fam == "file":
            with _open_text(self.path(_req(spec, "path", w))) as fh:
                t = formats.parse_coefficients(fh.read())
            if not isinstance(t, CoefficientSequence):
                raise ValidationError("expected a plain coefficient sequence file")
            return t
        if fam == "random":
            return random_sequence(_num_param(spec, "n", w, kind=int), spec.get("box_exp"),
                                   int(spec.get("m", 1)), _num_param(spec, "j_max", w, kind=int),
                                   self.seed, int(spec.get("trial", 0)) + trial,
                                   float(spec.get("decay", 0.0)), float(spec.get("density", 1.0)),
                                   bool(spec.get("complex", False)))
        raise ValidationError(f"unknown sequence family {fam!r}")

    # kernels -------------------------------------------------------
    def kernel(self, ref):
        def build(s):
            fam = _req(s, "family", "kernel")
            w = f"kernel[{fam}]"
            if fam == "bdef":
                return AdParams(_num_param(s, "D", w), _num_param(s, "E", w), _num_param(s, "F", w))
            if fam == "file":
                with _open_text(self.path(_req(s, "path", w))) as fh:
                    return formats.parse_kernel_csv(fh.read())
            raise ValidationError(f"unknown kernel family {fam!r}")
        return self._cached("kernels", ref, build)

    # filters -------------------------------------------------------
    def filter(self, ref) -> WaveletFilter:
        if isinstance(ref, str) and ref.startswith("db") and ref not in self.config.get("filters", {}):
            return WaveletFilter.daubechies(ref)
        spec, _ = self._decl("filters", ref)
        name = spec if isinstance(spec, str) else _req(spec, "name", "filter")
        return WaveletFilter.daubechies(name)

    # composite -----------------------------------------------------
    def besov_params(self, p: dict, m: int = 1) -> BesovSeqParams:
        return BesovSeqParams(self.exponent(_req(p, "p", "params")),
                              self.exponent(_req(p, "q", "params")),
                              self.exponent(p.get("s", 0.0)),
                              _num_param(p, "j_max", "params", kind=int), m,
                              int(p.get("mesh_extra", 1)))


class _open_text:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        try:
            self.fh = open(self.path, encoding="utf-8")
        except OSError as e:
            raise ValidationError(f"cannot read {self.path}: {e}") from None
        return self.fh

    def __exit__(self, *a):
        self.fh.close()


def cube_from(spec) -> DyadicCube:
    j = _num_param(spec, "j", "cube", kind=int)
    k = _req(spec, "k", "cube")
    return DyadicCube(j, tuple(int(v) for v in (k if isinstance(k, list) else [k])))


def index_from(spec) -> SpaceIndexData:
    w = "index"
    return SpaceIndexData(_num_param(spec, "n", w, kind=int), _num_param(spec, "p_minus", w),
                          _num_param(spec, "s_plus", w), _num_param(spec, "s_minus", w),
                          float(spec.get("clog_s", 0.0)), float(spec.get("clog_inv_q", 0.0)),
                          float(spec.get("d_upper", 0.0)))


def molecule_from(spec, n: int) -> MoleculeParams:
    w = "molecule"
    return MoleculeParams(_num_param(spec, "K", w), _num_param(spec, "L", w),
                          _num_param(spec, "M", w), _num_param(spec, "N", w), n)


def _report_rows(report):
    return [(c.name, c.lhs, c.op, c.rhs, c.ok) for c in report.checks]


_REPORT_COLS = ["condition", "lhs", "op", "rhs", "ok"]


def _seq_rows(t: CoefficientSequence, extra=None):
    rows = []
    for i, (Q, v) in enumerate(t.items()):
        v = np.asarray(v, complex)
        row = [Q.j, *Q.k] + [x for z in v for x in (z.real, z.imag)]
        if extra is not None:
            row.append(extra[i])
        rows.append(row)
    return rows


def _seq_cols(n: int, m: int):
    return ["j"] + [f"k{i + 1}" for i in range(n)] + [f"{p}{i + 1}" for i in range(m)
                                                         for p in ("re", "im")]


def _wavelet_input(ctx: Context, p: dict, filt: WaveletFilter):
    """Coefficients from a text file (``coefficients``) or the DWT of a ``function``."""
    if "coefficients" in p:
        with _open_text(ctx.path(p["coefficients"])) as fh:
            u = formats.parse_coefficients(fh.read(), {filt.name: filt})
        if isinstance(u, CoefficientSequence):
            raise ValidationError("expected a wavelet coefficient file with a filter header")
        return u
    f = ctx.function(_req(p, "function", "params"))
    return dwt(f, filt, p.get("levels"))


# ---------------------------------------------------------------- commands
def cmd_norm(ctx: Context, p: dict) -> Result:
    f = ctx.function(_req(p, "function", "params"))
    e = ctx.exponent(_req(p, "p", "params"))
    r = norm(f, e, ctx.tol)
    return Result(["value", "iterations", "residual"], [(r.value, r.iterations, r.residual)],
                  [f"norm = {r.value!r}"])


def cmd_mixed_norm(ctx: Context, p: dict) -> Result:
    fs = [ctx.function(ref) for ref in _req(p, "functions", "params")]
    if not fs:
        raise ValidationError("mixed-norm needs at least one level function")
    pe, qe = ctx.exponent(_req(p, "p", "params")), ctx.exponent(_req(p, "q", "params"))
    r = mixed_norm(fs, pe, qe, ctx.tol)
    return Result(["levels", "value", "iterations", "residual"],
                  [(len(fs), r.value, r.iterations, r.residual)], [f"mixed norm = {r.value!r}"])


def cmd_weight_char(ctx: Context, p: dict) -> Result:
    W = ctx.weight(_req(p, "weight", "params"))
    e = ctx.exponent(_req(p, "p", "params"))
    top = int(p.get("max_level", min(3, W.grid.level)))
    rows = []
    for j in range(top + 1):
        rows.append((j, apinfty_characteristic(W, e, list(W.grid.cubes(j)))))
    total = max(r[1] for r in rows)
    return Result(["level", "characteristic"], rows,
                  [f"A_(p,inf) characteristic over levels 0..{top} >= {total!r}"])


def cmd_reduce(ctx: Context, p: dict) -> Result:
    W = ctx.weight(_req(p, "weight", "params"))
    e = ctx.exponent(_req(p, "p", "params"))
    j_max = _num_param(p, "j_max", "params", kind=int)
    fam = reducing_family(W, e, j_max, p.get("method", "auto"), int(p.get("dir_count", 64)),
                          ctx.seed, ctx.tol, threads=ctx.threads)
    n, m = W.grid.n, W.m
    cols = ["j"] + [f"k{i + 1}" for i in range(n)] + [f"a{r + 1}{c + 1}" for r in range(m)
                                                       for c in range(m)]
    rows = []
    for Q, A in fam.items():
        rows.append([Q.j, *Q.k, *np.asarray(A).reshape(-1)])
    return Result(cols, rows, [f"method = {fam.method}", f"cubes = {len(rows)}"])


def cmd_dims(ctx: Context, p: dict) -> Result:
    W = ctx.weight(_req(p, "weight", "params"))
    e = ctx.exponent(_req(p, "p", "params"))
    lams = p.get("lambdas", [1, 2, 4, 8, 16])
    cubes = None
    if "cubes" in p:
        cubes = [cube_from(c) for c in p["cubes"]]
    est = estimate_dimensions(W, e, lams, cubes)
    n = W.grid.n
    cols = ["j"] + [f"k{i + 1}" for i in range(n)] + ["lambda", "lower", "upper"]
    rows = [[Q.j, *Q.k, lam, lo, up] for Q, lam, lo, up in est.table]
    return Result(cols, rows, [f"d1 = {est.d1!r}", f"d2 = {est.d2!r}"],
                  tables={"estimate": (["d1", "d2"], [(est.d1, est.d2)])})


def cmd_seqnorm(ctx: Context, p: dict) -> Result:
    """One norm of a sequence, or per-trial b(W)/b(A) ratios when ``trials`` is given."""
    mode = p.get("mode", "W")
    if mode not in ("unweighted", "W", "A", "equivalence"):
        raise ValidationError(f"unknown seqnorm mode {mode!r}")
    trials = int(p.get("trials", 1))
    W = ctx.weight(p["weight"]) if mode != "unweighted" else None
    ref = _req(p, "sequence", "params")
    t0 = ctx.sequence(ref)
    params = ctx.besov_params(p, t0.m)
    fam = None
    if mode in ("A", "equivalence"):
        fam = reducing_family(W, params.p, params.j_max, p.get("method", "auto"),
                              int(p.get("dir_count", 64)), ctx.seed, ctx.tol, threads=ctx.threads)
    rows = []
    for trial in range(trials):
        t = t0 if trial == 0 else ctx.sequence(ref, trial)
        if mode == "unweighted":
            W1 = MatrixWeight.identity(params.grid_for(t), t.m)
            rows.append((trial, besov_seq_norm_W(t, W1, params, ctx.tol).value, "", ""))
            continue
        nw = besov_seq_norm_W(t, W, params, ctx.tol).value if mode != "A" else ""
        na = besov_seq_norm_A(t, fam, params, W.grid, ctx.tol).value if fam is not None else ""
        ratio = nw / na if mode == "equivalence" and na else ""
        rows.append((trial, nw, na, ratio))
    summary = [f"mode = {mode}", f"trials = {trials}"]
    if mode == "equivalence":
        rs = [r[3] for r in rows if r[3] != ""]
        summary.append(f"ratio interval = [{min(rs)!r}, {max(rs)!r}]")
    return Result(["trial", "norm_W", "norm_A", "ratio"], rows, summary)


def cmd_ad_apply(ctx: Context, p: dict) -> Result:
    t = ctx.sequence(_req(p, "sequence", "params"))
    kern = ctx.kernel(_req(p, "kernel", "params"))
    tr = Truncation(float(p.get("rho", 0.0)), p.get("dj"))
    res = apply_almost_diagonal(kern, t, tr)
    s = res.sequence
    bound = res.dropped_bound if res.dropped_bound is not None else np.zeros(
        Lattice(s.n, s.box_exp, s.j_max).size)
    cols = _seq_cols(s.n, s.m) + ["dropped_bound"]
    return Result(cols, _seq_rows(s, bound),
                  [f"entries = {len(bound)}", f"max dropped bound = {float(np.max(bound))!r}"],
                  files={"ad-apply.coef": formats.coefficients_text(s, all_entries=True)})


def cmd_ad_check(ctx: Context, p: dict) -> Result:
    ad = AdParams(_num_param(p, "D", "params"), _num_param(p, "E", "params"),
                  _num_param(p, "F", "params"))
    idx = index_from(_req(p, "index", "params"))
    rep = ad_condition_check(ad, idx)
    return Result(_REPORT_COLS, _report_rows(rep), [f"passed = {rep.passed}",
                                                    f"J = {idx.J!r}", f"C = {idx.C!r}"])


def cmd_ad_bound(ctx: Context, p: dict) -> Result:
    kern = ctx.kernel(_req(p, "kernel", "params"))
    W = ctx.weight(_req(p, "weight", "params"))
    params = ctx.besov_params(p, W.m)
    weight = W
    if p.get("norm", "W") == "A":
        weight = reducing_family(W, params.p, params.j_max, p.get("method", "auto"),
                                 seed=ctx.seed, tol=ctx.tol, threads=ctx.threads)
    stats = empirical_operator_norm(kern, params, weight, int(p.get("trials", 20)), ctx.seed,
                                    decay=p.get("decay"), grid=W.grid)
    rows = [(i, r) for i, r in enumerate(stats.ratios)]
    return Result(["trial", "ratio"], rows,
                  [f"max = {stats.max!r}", f"median = {stats.median!r}", f"q90 = {stats.q90!r}"])


def cmd_czo_check(ctx: Context, p: dict) -> Result:
    mode = p.get("mode", "theorem")
    idx = index_from(p["index"]) if "index" in p else None
    mol = None
    if "molecule" in p:
        mol = molecule_from(p["molecule"], int(p["molecule"].get("n", 1)))
    rep = czo_condition_check(_num_param(p, "sigma", "params", kind=int),
                              _num_param(p, "E", "params"), _num_param(p, "F", "params"),
                              _num_param(p, "G", "params"), _num_param(p, "H", "params", 0.0),
                              idx, mode, mol)
    rows = _report_rows(rep)
    summary = [f"mode = {mode}", f"passed = {rep.passed}"]
    if "molecule_kind" in p:
        mrep = molecule_condition_check(p["molecule_kind"], mol, idx)
        rows += _report_rows(mrep)
        summary.append(f"molecule conditions passed = {mrep.passed}")
    return Result(_REPORT_COLS, rows, summary)


def cmd_mol_check(ctx: Context, p: dict) -> Result:
    g = ctx.grid(_req(p, "grid", "params"))
    Q = cube_from(_req(p, "cube", "params"))
    r = float(p.get("r", 3.0))
    a = _req(p, "atom", "params")
    atom = make_atom(Q, _num_param(a, "L", "atom"), _num_param(a, "N", "atom"), g, r)
    mols = p.get("molecules", [p["molecule"]] if "molecule" in p else None)
    if not mols:
        raise ValidationError("params needs 'molecule' or 'molecules'")
    rows = []
    ok = True
    for i, ms in enumerate(mols):
        mp = molecule_from(ms, g.n)
        c = atom_molecule_constant(mp.K, mp.M, g.n, r)
        rep = molecule_check(atom.scaled(c), mp, seed=ctx.seed)
        ok &= rep.passed
        for cr in rep.conditions:
            rows.append((i, mp.K, mp.L, mp.M, mp.N, cr.name, cr.value, cr.threshold,
                         cr.applicable, cr.ok))
    return Result(["molecule", "K", "L", "M", "N", "condition", "value", "threshold",
                   "applicable", "ok"], rows, [f"all passed = {ok}"])


def cmd_mol_pair(ctx: Context, p: dict) -> Result:
    g = ctx.grid(_req(p, "grid", "params"))
    m = molecule_from(_req(p, "m", "params"), g.n)
    b = molecule_from(_req(p, "b", "params"), g.n)
    tab = pairing_table(m, b, g, _num_param(p, "max_level", "params", kind=int),
                        float(p.get("r", 3.0)), float(p.get("alpha", 0.1)))
    n = g.n
    cols = ["q_j"] + [f"q_k{i + 1}" for i in range(n)] + ["p_j"] + \
        [f"p_k{i + 1}" for i in range(n)] + ["pairing", "bound", "ratio"]
    rows = [[Q.j, *Q.k, P.j, *P.k, v, bd, v / bd] for Q, P, v, bd in tab.rows]
    M, G, H = tab.exponents
    return Result(cols, rows, [f"M, G, H = {M!r}, {G!r}, {H!r}", f"C_hat = {tab.c_hat!r}"])


def cmd_phi(ctx: Context, p: dict) -> Result:
    f = ctx.function(_req(p, "function", "params"))
    g = f.grid
    G = int(p.get("grid_log2", g.level))
    if G != g.level:
        raise ValidationError(f"--grid-log2 {G} differs from the function mesh level {g.level}")
    prof = p.get("profile", "cosine")
    if prof not in PROFILES:
        raise ValidationError(f"unknown profile {prof!r}; choose from {PROFILES}")
    pair = make_admissible_pair(G, _num_param(p, "j_max", "params", kind=int), prof, g.n,
                                g.box_exp)
    t = phi_transform(f, pair)
    back = inverse_phi_transform(t, pair, f.kind)
    err = float(np.max(np.abs(np.asarray(back.values) - np.asarray(f.values))))
    res = pair.partition_residual()
    return Result(["j_max", "profile", "band", "partition_residual", "reconstruction_error"],
                  [(pair.j_max, prof, pair.band, res, err)],
                  [f"partition residual = {res!r}", f"reconstruction error = {err!r}"],
                  files={"phi.coef": formats.coefficients_text(t)})


def cmd_wavelet(ctx: Context, p: dict) -> Result:
    filt = ctx.filter(p.get("filter", "db2"))
    f = ctx.function(_req(p, "function", "params"))
    u = dwt(f, filt, p.get("levels"))
    back = idwt(u, f.kind)
    err = float(np.max(np.abs(np.asarray(back.values) - np.asarray(f.values))))
    e_f = float(np.sum(np.abs(np.asarray(f.values)) ** 2) * f.grid.cell_volume)
    return Result(["filter", "j0", "energy", "function_energy", "reconstruction_error"],
                  [(filt.name, u.j0, u.energy(), e_f, err)],
                  [f"filter = {filt.name}", f"reconstruction error = {err!r}"],
                  files={"wavelet.coef": formats.coefficients_text(u)})


def _geometry(ctx: Context, p: dict, filt: WaveletFilter) -> TraceGeometry:
    return TraceGeometry.build(filt, 2, k0=p.get("k0"))


def cmd_trace(ctx: Context, p: dict) -> Result:
    filt = ctx.filter(p.get("filter", "db2"))
    u = _wavelet_input(ctx, p, filt)
    geom = _geometry(ctx, p, filt)
    v = trace_coeffs(u, geom)
    return Result(["filter", "N", "k0", "input_energy", "trace_energy"],
                  [(filt.name, geom.N, geom.k0, u.energy(), v.energy())],
                  [f"N = {geom.N}", f"k0 = {geom.k0}"],
                  files={"trace.coef": formats.coefficients_text(v)})


def cmd_extend(ctx: Context, p: dict) -> Result:
    filt = ctx.filter(p.get("filter", "db2"))
    v = _wavelet_input(ctx, p, filt)
    geom = _geometry(ctx, p, filt)
    u = extend_coeffs(v, geom)
    back = trace_coeffs(u, geom)
    err = max(float(np.max(np.abs(back.seqs[lam].flat() - s.resized(back.seqs[lam].j_max).flat())))
              for lam, s in v.seqs.items())
    return Result(["filter", "k0", "anchor", "roundtrip_error"],
                  [(filt.name, geom.k0, geom.phi_at[geom.k0], err)],
                  [f"trace(extend(v)) - v max error = {err!r}"],
                  files={"extend.coef": formats.coefficients_text(u)})


def cmd_trace_check(ctx: Context, p: dict) -> Result:
    W = ctx.weight(_req(p, "weight_W", "params"))
    V = ctx.weight(_req(p, "weight_V", "params"))
    e = ctx.exponent(_req(p, "p", "params"))
    I_set = [cube_from(c) for c in _req(p, "cubes", "params")]
    comp = trace_compatibility(W, V, e, I_set, int(p.get("dir_count", 64)), ctx.seed,
                               int(p.get("k_max", 8)), float(p.get("delta", 0.0)),
                               p.get("method", "auto"))
    rows = [(I.j, I.k[0], k, r) for I, k, r in comp.table]
    summary = [f"forward constant = {comp.c_forward!r}", f"backward constant = {comp.c_backward!r}"]
    tables = {"compatibility": (["c_forward", "c_backward", "delta"],
                                [(comp.c_forward, comp.c_backward, comp.delta)])}
    if "s" in p:
        rep = s_constraint(ctx.exponent(p["s"]), e, W.grid, float(p.get("d_upper_V", 0.0)))
        summary.append(f"s constraint passed = {rep.passed}")
        tables["s-constraint"] = (_REPORT_COLS, _report_rows(rep))
    return Result(["i_j", "i_k", "k", "ratio"], rows, summary, tables)


RUNNERS = {
    "norm": cmd_norm, "mixed-norm": cmd_mixed_norm, "weight-char": cmd_weight_char,
    "reduce": cmd_reduce, "dims": cmd_dims, "seqnorm": cmd_seqnorm, "ad-apply": cmd_ad_apply,
    "ad-check": cmd_ad_check, "ad-bound": cmd_ad_bound, "czo-check": cmd_czo_check,
    "mol-check": cmd_mol_check, "mol-pair": cmd_mol_pair, "phi": cmd_phi, "wavelet": cmd_wavelet,
    "trace": cmd_trace, "extend": cmd_extend, "trace-check": cmd_trace_check,
}


# ---------------------------------------------------------------- driver
def validate_config(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"schema_version must be {SCHEMA_VERSION}")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown top-level keys: {sorted(unknown)}")
    for s in SECTIONS:
        if not isinstance(cfg.get(s, {}), dict):
            raise ValidationError(f"{s} must be an object of named declarations")
    if not isinstance(cfg.get("params", {}), dict):
        raise ValidationError("params must be an object")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    with _open_text(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}") from None
    return validate_config(cfg)


def _outputs(command: str, res: Result, prefix: str = "") -> dict:
    out = {f"{prefix}{command}.csv": res.csv()}
    for name, (cols, rows) in res.tables.items():
        out[f"{prefix}{command}-{name}.csv"] = res.csv(cols, rows)
    for name, data in res.files.items():
        out[prefix + name] = data
    out[f"{prefix}summary.txt"] = f"command: {command}\n" + "".join(s + "\n" for s in res.summary)
    return out


def run_command(command: str, ctx: Context, params: dict) -> dict:
    """Run one command and return its output files as {relative name: content}."""
    if command == "suite":
        return _run_suite(ctx, params)
    return _outputs(command, RUNNERS[command](ctx, params))


def _run_suite(ctx: Context, params: dict) -> dict:
    runs = _req(params, "runs", "params")
    if not isinstance(runs, list) or not runs:
        raise ValidationError("suite needs a nonempty list of runs")
    names = []
    for r in runs:
        cmd = _req(r, "command", "run")
        if cmd not in RUNNERS:
            raise ValidationError(f"unknown suite command {cmd!r}")
        names.append(str(r.get("name", cmd)))
    if len(set(names)) != len(names):
        raise ValidationError("suite run names must be unique")

    def one(i):
        r = runs[i]
        sub = Context(ctx.config, ctx.seed, ctx.tol, 1, ctx.base_dir)
        try:
            return _outputs(r["command"], RUNNERS[r["command"]](sub, r.get("params", {})),
                            names[i] + "/"), None
        except NumericalFailure as e:
            return {}, e

    with ThreadPoolExecutor(max_workers=max(1, ctx.threads)) as pool:
        results = list(pool.map(one, range(len(runs))))
    files, rows, failed = {}, [], None
    for name, r, (out, err) in zip(names, runs, results):
        files.update(out)
        rows.append((name, r["command"], "ok" if err is None else "numerical-failure"))
        if err is not None and failed is None:
            failed = err
    res = Result(["name", "command", "status"], rows, [f"runs = {len(rows)}"])
    files.update(_outputs("suite", res))
    if failed is not None:
        failed.partial = files
        raise failed
    return files


def write_outputs(out_dir: str, files: dict) -> None:
    for name in sorted(files):
        formats.atomic_write(os.path.join(out_dir, name), files[name])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vbesov", description="Matrix-weighted variable Besov experiments")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for c in COMMANDS:
        sp = sub.add_parser(c)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="u64 seed (overrides the config)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--tol", type=float, help="norm tolerance (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker threads (default $VBESOV_THREADS or 1)")
        if c == "phi":
            sp.add_argument("--grid-log2", type=int)
            sp.add_argument("--jmax", type=int)
            sp.add_argument("--profile", choices=PROFILES)
    return ap


def _threads(arg) -> int:
    if arg is not None:
        v = arg
    else:
        env = os.environ.get("VBESOV_THREADS", "1")
        try:
            v = int(env)
        except ValueError:
            raise ValidationError(f"VBESOV_THREADS={env!r} is not an integer") from None
    if v < 1:
        raise ValidationError("thread count must be >= 1")
    return v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        exp = cfg.get("experiment")
        if exp is not None and exp != args.command:
            raise ValidationError(f"config declares experiment {exp!r}, command is {args.command!r}")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        tol = args.tol if args.tol is not None else float(cfg.get("tol", 1e-10))
        if not tol > 0:
            raise ValidationError("tol must be positive")
        params = dict(cfg.get("params", {}))
        if args.command == "phi":
            for flag, key in (("grid_log2", "grid_log2"), ("jmax", "j_max"), ("profile", "profile")):
                if getattr(args, flag) is not None:
                    params[key] = getattr(args, flag)
        base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
        ctx = Context(cfg, seed, tol, _threads(args.threads), base)
        files = run_command(args.command, ctx, params)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 1
    except NumericalFailure as e:
        partial = getattr(e, "partial", None)
        if partial:
            write_outputs(args.out, partial)
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    write_outputs(args.out, files)
    return 0


if __name__ == "__main__":
    sys.exit(main())
