"""Piecewise-linear scalar fields on the flat unit torus.

The torus is triangulated by an ``n x n`` vertex grid; every unit cell is
split along its ``(+1, +1)`` diagonal.  Vertex ``(i, j)`` sits at
``(p, q) = (i/n, j/n)`` and has flat index ``v = i*n + j``.

Triangle ``2*(i*n + j) + s`` has counter-clockwise vertices

    s = 0:  (i, j), (i+1, j),   (i+1, j+1)
    s = 1:  (i, j), (i+1, j+1), (i, j+1)

and edge ``3*v + d`` joins vertex ``v = (i, j)`` to ``(i+1, j)`` (d=0),
``(i, j+1)`` (d=1) or ``(i+1, j+1)`` (d=2).
"""
from __future__ import annotations

import ast
import math
import operator
import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

MIN_N = 8
RASTER_MAGIC = b"TQS1"

# counter-clockwise link of a vertex
LINK_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1))
_TRI_OFFSETS = (((0, 0), (1, 0), (1, 1)), ((0, 0), (1, 1), (0, 1)))


class FieldError(ValueError):
    """Bad field input: resolution, non-finite values, malformed source."""


class RegularValueError(ValueError):
    """A level coincides with a vertex value; pick another level."""


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Combinatorics of the triangulated ``n x n`` torus (shared, read-only)."""

    n: int
    tri_vertices: np.ndarray = field(repr=False)  # (2n^2, 3) ccw
    tri_edges: np.ndarray = field(repr=False)  # (2n^2, 3), edge k joins corners k, k+1
    tri_offsets: np.ndarray = field(repr=False)  # (2n^2, 3, 2) unwrapped index coords
    edge_vertices: np.ndarray = field(repr=False)  # (3n^2, 2)
    edge_triangles: np.ndarray = field(repr=False)  # (3n^2, 2)

    @property
    def n_vertices(self) -> int:
        return self.n * self.n

    @property
    def n_edges(self) -> int:
        return 3 * self.n * self.n

    @property
    def n_triangles(self) -> int:
        return 2 * self.n * self.n

    @property
    def triangle_area(self) -> float:
        return 1.0 / (2 * self.n * self.n)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles


@lru_cache(maxsize=8)
def torus_grid(n: int) -> TorusGrid:
    if n < MIN_N:
        raise FieldError(f"grid resolution n={n} below minimum {MIN_N}")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()

    def vid(a, b):
        return (a % n) * n + (b % n)

    v = vid(i, j)
    tv = np.empty((2 * n * n, 3), dtype=np.int64)
    te = np.empty((2 * n * n, 3), dtype=np.int64)
    toff = np.empty((2 * n * n, 3, 2), dtype=np.int64)
    t0, t1 = 2 * v, 2 * v + 1
    for s, tids in ((0, t0), (1, t1)):
        for k, (di, dj) in enumerate(_TRI_OFFSETS[s]):
            tv[tids, k] = vid(i + di, j + dj)
            toff[tids, k, 0] = i + di
            toff[tids, k, 1] = j + dj
    te[t0] = np.stack([3 * v + 0, 3 * vid(i + 1, j) + 1, 3 * v + 2], axis=1)
    te[t1] = np.stack([3 * v + 2, 3 * vid(i, j + 1) + 0, 3 * v + 1], axis=1)

    ev = np.empty((3 * n * n, 2), dtype=np.int64)
    ev[3 * v + 0] = np.stack([v, vid(i + 1, j)], axis=1)
    ev[3 * v + 1] = np.stack([v, vid(i, j + 1)], axis=1)
    ev[3 * v + 2] = np.stack([v, vid(i + 1, j + 1)], axis=1)
    et = np.empty((3 * n * n, 2), dtype=np.int64)
    et[3 * v + 0] = np.stack([2 * v, 2 * vid(i, j - 1) + 1], axis=1)
    et[3 * v + 1] = np.stack([2 * v + 1, 2 * vid(i - 1, j)], axis=1)
    et[3 * v + 2] = np.stack([2 * v, 2 * v + 1], axis=1)
    for arr in (tv, te, toff, ev, et):
        arr.setflags(write=False)
    return TorusGrid(n, tv, te, toff, ev, et)


@dataclass(frozen=True, eq=False)
class TorusField:
    """PL field: real value per vertex plus a strict total order for ties.

    ``order[i, j]`` is the rank of the vertex in the perturbed order
    ``(value, flat index)``; it is used for combinatorics only.
    """

    grid: TorusGrid
    values: np.ndarray
    order: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def flat_order(self) -> np.ndarray:
        return self.order.ravel()

    @property
    def min_value(self) -> float:
        return float(self.values.min())

    @property
    def max_value(self) -> float:
        return float(self.values.max())

    @cached_property
    def sorted_triangles(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per triangle: values, ranks and vertex ids, sorted by rank."""
        tv = self.grid.tri_vertices
        ords = self.flat_order[tv]
        perm = np.argsort(ords, axis=1)
        ids = np.take_along_axis(tv, perm, axis=1)
        out = (self.flat_values[ids], np.take_along_axis(ords, perm, axis=1), ids)
        for a in out:
            a.setflags(write=False)
        return out

    def with_values(self, values) -> "TorusField":
        return build_field(self.n, np.asarray(values, dtype=float))

    def __neg__(self) -> "TorusField":
        return self.with_values(-self.values)

    def __add__(self, other) -> "TorusField":
        other = other.values if isinstance(other, TorusField) else other
        return self.with_values(self.values + other)

    def __mul__(self, a: float) -> "TorusField":
        return self.with_values(a * self.values)

    __rmul__ = __mul__


def _perturbation_order(values: np.ndarray) -> np.ndarray:
    flat = values.ravel()
    idx = np.lexsort((np.arange(flat.size), flat))
    rank = np.empty(flat.size, dtype=np.int64)
    rank[idx] = np.arange(flat.size)
    return rank.reshape(values.shape)


_FUNCS = {"sin": np.sin, "cos": np.cos}
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_expression(expr: str, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Evaluate an arithmetic expression over ``p, q, sin, cos, pi``."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise FieldError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    names = {"p": p, "q": q, "pi": math.pi}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise FieldError(f"unsupported element in expression {expr!r}: {ast.dump(node)}")

    with np.errstate(all="ignore"):
        out = ev(tree)
    return np.broadcast_to(np.asarray(out, dtype=float), p.shape).copy()


def vertex_coordinates(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return i / n, j / n


def build_field(n: int, source) -> TorusField:
    """Field from an expression string, a callable ``f(p, q)`` or an ``(n, n)`` raster."""
    grid = torus_grid(n)
    if isinstance(source, str):
        values = eval_expression(source, *vertex_coordinates(n))
    elif callable(source):
        values = np.asarray(source(*vertex_coordinates(n)), dtype=float)
        values = np.broadcast_to(values, (n, n)).copy()
    else:
        values = np.array(source, dtype=float)
        if values.shape != (n, n):
            raise FieldError(f"raster shape {values.shape} does not match n={n}")
    if not np.all(np.isfinite(values)):
        raise FieldError("field has non-finite vertex values")
    values.setflags(write=False)
    order = _perturbation_order(values)
    order.setflags(write=False)
    return TorusField(grid, values, order)


def read_raster(path) -> TorusField:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != RASTER_MAGIC:
        raise FieldError(f"{path}: missing TQS1 header")
    (n,) = struct.unpack("<I", data[4:8])
    if data[8:16] != bytes(8):
        raise FieldError(f"{path}: reserved header bytes must be zero")
    body = data[16:]
    if len(body) != 8 * n * n:
        raise FieldError(f"{path}: expected {n * n} float64 values, got {len(body) / 8:g}")
    flat = np.frombuffer(body, dtype="<f8")
    # i runs fastest on disk
    return build_field(n, flat.reshape(n, n).T)


def write_raster(field_: TorusField, path) -> None:
    n = field_.n
    header = RASTER_MAGIC + struct.pack("<I", n) + bytes(8)
    body = np.ascontiguousarray(field_.values.T, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


# ---------------------------------------------------------------------------
# exact clipping of PL triangles


def sorted_triangle_data(field_: TorusField):
    """Per triangle: values and perturbation ranks sorted by rank."""
    vals, ords, _ = field_.sorted_triangles
    return vals, ords


def _below_linear(a, b, c, t):
    """Area fraction and normalised integral of the part of a linear triangle below ``t``.

    ``a <= b <= c`` are the corner values; arrays broadcast.  The integral is
    divided by the triangle area.
    """
    a, b, c, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, t)))
    frac = np.zeros(a.shape)
    ival = np.zeros(a.shape)
    full = t >= c
    frac[full] = 1.0
    ival[full] = (a[full] + b[full] + c[full]) / 3.0
    lo = (t > a) & (t <= b) & ~full
    d = (c[lo] - a[lo]) * (b[lo] - a[lo])
    s = t[lo] - a[lo]
    frac[lo] = s * s / d
    ival[lo] = s * s * (2 * t[lo] + a[lo]) / (3 * d)
    hi = (t > b) & ~full
    d = (c[hi] - a[hi]) * (c[hi] - b[hi])
    s = c[hi] - t[hi]
    frac[hi] = 1.0 - s * s / d
    ival[hi] = (a[hi] + b[hi] + c[hi]) / 3.0 - s * s * (2 * t[hi] + c[hi]) / (3 * d)
    return frac, ival


def clip_below(vals, ords, level_value, level_order=None):
    """Area fraction and normalised integral below a (perturbed) level.

    ``vals``/``ords`` come from :func:`sorted_triangle_data` (possibly a row
    subset).  Triangles that are flat at exactly ``level_value`` are split
    by interpolating the perturbation ranks, which is the limit of the
    symbolic perturbation; everywhere else the unperturbed values decide.
    """
    vals = np.asarray(vals, dtype=float)
    level_value = np.broadcast_to(np.asarray(level_value, dtype=float), vals.shape[:1])
    frac, ival = _below_linear(vals[:, 0], vals[:, 1], vals[:, 2], level_value)
    if level_order is None:
        return frac, ival
    flat = (vals[:, 0] == vals[:, 2]) & (vals[:, 0] == level_value)
    if flat.any():
        lo = np.broadcast_to(np.asarray(level_order, dtype=float), vals.shape[:1])[flat]
        o = ords[flat].astype(float)
        f, _ = _below_linear(o[:, 0], o[:, 1], o[:, 2], lo)
        frac[flat] = f
        ival[flat] = f * vals[flat, 0]
    return frac, ival


def triangle_means(field_: TorusField, shift: float = 0.0) -> np.ndarray:
    return (field_.flat_values[field_.grid.tri_vertices] - shift).mean(axis=1)


def integrate(field_: TorusField, region=None) -> float:
    """Exact integral of the PL interpolant over the torus or a subsurface."""
    if region is None:
        # each vertex carries 6 triangles of area 1/(2n^2) at weight 1/3
        ref = field_.values.flat[0]
        return float(ref + np.mean(field_.values - ref))
    if region.n != field_.n:
        raise FieldError(f"region on n={region.n} grid, field on n={field_.n}")
    return float(region.integral(field_))


def lipschitz_constant(field_: TorusField) -> float:
    """Lipschitz constant of the PL interpolant (largest edge slope, unit torus)."""
    v, n = field_.values, field_.n
    lengths = {(1, 0): 1.0, (0, 1): 1.0, (1, 1): math.sqrt(2.0)}
    return max(
        float(np.abs(np.roll(v, (-a, -b), axis=(0, 1)) - v).max()) * n / length
        for (a, b), length in lengths.items()
    )


def is_regular_value(field_: TorusField, t: float) -> bool:
    return not np.any(field_.values == t)


def regular_values(field_: TorusField) -> np.ndarray:
    """Midpoints between consecutive distinct vertex values."""
    u = np.unique(field_.values)
    return 0.5 * (u[:-1] + u[1:])


def nudge_regular(field_: TorusField, ts) -> np.ndarray:
    """Move any level hitting a vertex value to the middle of the next gap."""
    u = np.unique(field_.values)
    ts = np.array(ts, dtype=float)
    k = np.searchsorted(u, ts)
    hit = (k < u.size) & (u[np.minimum(k, u.size - 1)] == ts)
    for idx in np.flatnonzero(hit):
        kk = k[idx]
        nxt = u[kk + 1] if kk + 1 < u.size else u[kk] + 1.0
        ts[idx] = 0.5 * (u[kk] + nxt)
    return ts


# ---------------------------------------------------------------------------
# PL critical points


def lower_link_components(field_: TorusField) -> np.ndarray:
    """Number of sign changes / 2 around each vertex link; -1 for maxima, 0 for minima."""
    o = field_.order
    lower = np.stack(
        [np.roll(o, (-di, -dj), axis=(0, 1)) < o for di, dj in LINK_OFFSETS], axis=0
    )
    changes = (lower != np.roll(lower, 1, axis=0)).sum(axis=0)
    comps = changes // 2
    comps[(changes == 0) & lower[0]] = -1
    return comps


@dataclass(frozen=True)
class CriticalPoint:
    vertex: int
    value: float
    order: int
    kind: str  # "min", "max", "saddle"
    multiplicity: int = 1


def critical_points(field_: TorusField) -> list[CriticalPoint]:
    """PL critical vertices sorted by perturbed order."""
    comps = lower_link_components(field_).ravel()
    out = []
    for v in np.flatnonzero(comps != 1):
        c = comps[v]
        kind = "min" if c == 0 else "max" if c == -1 else "saddle"
        out.append(
            CriticalPoint(
                int(v),
                float(field_.flat_values[v]),
                int(field_.flat_order[v]),
                kind,
                max(int(c) - 1, 1),
            )
        )
    out.sort(key=lambda cp: cp.order)
    return out


def critical_values(field_: TorusField) -> np.ndarray:
    return np.unique([cp.value for cp in critical_points(field_)])


# ---------------------------------------------------------------------------
# lattice symplectomorphisms


@dataclass(frozen=True)
class LatticeSymplectomorphism:
    """``x -> A x + t`` on grid indices, ``A`` in SL(2, Z), ``t`` in units of 1/n."""

    matrix: tuple[tuple[int, int], tuple[int, int]] = ((1, 0), (0, 1))
    translation: tuple[int, int] = (0, 0)

    def __post_init__(self):
        (a, b), (c, d) = self.matrix
        if any(int(x) != x for x in (a, b, c, d)) or a * d - b * c != 1:
            raise FieldError(f"matrix {self.matrix} is not in SL(2, Z)")

    @property
    def preserves_triangulation(self) -> bool:
        """True when the map permutes triangles, not just vertices."""
        A = np.array(self.matrix)
        edges = {(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1), (-1, -1)}
        return all(tuple(A @ np.array(e)) in edges for e in edges)

    def vertex_map(self, n: int) -> np.ndarray:
        (a, b), (c, d) = self.matrix
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ii = (a * i + b * j + self.translation[0]) % n
        jj = (c * i + d * j + self.translation[1]) % n
        return (ii * n + jj).ravel()


ROTATION_6 = ((1, -1), (1, 0))  # order-6 symmetry of the triangulation


def apply_map(field_: TorusField, phi: LatticeSymplectomorphism) -> TorusField:
    """Push the field forward: returns ``H o phi^-1`` as a vertex permutation."""
    target = phi.vertex_map(field_.n)
    new = np.empty(field_.n * field_.n)
    new[target] = field_.flat_values
    return build_field(field_.n, new.reshape(field_.n, field_.n))


def trig_coefficients(seed: int, degree: int, zero_mean: bool = False) -> list[tuple[int, int, float, float]]:
    """Seeded ``(k, l, a_kl, b_kl)`` list, coefficients uniform in [-1, 1]."""
    if not 0 <= degree <= 4:
        raise FieldError(f"trig degree {degree} outside 0..4")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(-degree, degree + 1):
        for l in range(-degree, degree + 1):
            a, b = rng.uniform(-1.0, 1.0, size=2)
            if k == 0 and l == 0 and zero_mean:
                a = 0.0
            out.append((k, l, float(a), float(b)))
    return out


def generate_field(seed: int, degree: int, n: int = 128, zero_mean: bool = False) -> TorusField:
    """Random real trigonometric polynomial of the given degree."""
    p, q = vertex_coordinates(n)
    values = np.zeros((n, n))
    for k, l, a, b in trig_coefficients(seed, degree, zero_mean):
        arg = 2 * np.pi * ((k * np.arange(n) % n)[:, None] + (l * np.arange(n) % n)[None, :]) / n
        values += a * np.cos(arg) + b * np.sin(arg)
    return build_field(n, values)
