"""Subsurfaces of the grid torus and the disk-eliminating regularization.

A subsurface is stored on an :class:`Arrangement`: a partition of the torus
into connected open regions separated by disjoint simple closed loops.  The
subsurface itself is a membership flag per region, so its boundary is the
set of loops whose two sides disagree.  Two arrangements are built here:

* cell arrangements, from a set of closed triangles;
* level arrangements, from a PL field and a regular value ``t``; triangles
  crossed by the level line are split exactly along it.

Everything topological is read off the region graph (regions as nodes,
loops as edges) together with the Euler characteristic of each region.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .torus_field import (
    FieldError,
    RegularValueError,
    TorusField,
    clip_below,
    torus_grid,
)

CONTRACTIBLE = "contractible"
ESSENTIAL = "essential"
EXTERIOR = "exterior"
INTERIOR = "interior"


class TopologyError(RuntimeError):
    """A combinatorial invariant of the torus failed (tracing bug)."""


def _components(n_nodes: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    g = coo_matrix((np.ones(a.size, dtype=np.int8), (a, b)), shape=(n_nodes, n_nodes))
    return connected_components(g, directed=False)[1]


@dataclass(frozen=True, eq=False)
class BoundaryLoop:
    """Oriented simple closed PL curve separating regions ``inner`` and ``outer``.

    ``segments`` holds the oriented pieces in unwrapped grid units; the
    ``inner`` region lies on their left.
    """

    index: int
    winding: tuple[int, int]
    inner: int
    outer: int
    n: int
    segments: np.ndarray = field(repr=False)

    @property
    def contractible(self) -> bool:
        return self.winding == (0, 0)

    def points(self) -> np.ndarray:
        """Ordered trace as points of ``[0, 1)^2``."""
        n = self.n
        key = lambda xy: (round(xy[0] % n, 9) % n, round(xy[1] % n, 9) % n)
        nxt = {key(s[0]): k for k, s in enumerate(self.segments)}
        out, k = [], 0
        for _ in range(len(self.segments)):
            out.append(self.segments[k, 0])
            k = nxt[key(self.segments[k, 1])]
        return np.asarray(out) % n / n


def classify_loop(loop: BoundaryLoop) -> str:
    return CONTRACTIBLE if loop.contractible else ESSENTIAL


@dataclass(eq=False)
class Arrangement:
    """Regions and separating loops covering the whole torus."""

    n: int
    region_area: np.ndarray
    region_chi: np.ndarray
    loops: tuple
    # () -> (part_region, part_area): per triangle, the region of its part
    # below/above the level (-1 if empty) and the part areas
    parts: object = field(repr=False)
    level: float | None = None
    source: TorusField | None = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.region_chi.sum()) != 0:
            raise TopologyError(f"regions have total Euler characteristic {self.region_chi.sum()}")
        self._disks: dict[int, frozenset] = {}

    @cached_property
    def _parts(self):
        return self.parts()

    @property
    def part_region(self) -> np.ndarray:
        return self._parts[0]

    @property
    def part_area(self) -> np.ndarray:
        return self._parts[1]

    @property
    def n_regions(self) -> int:
        return len(self.region_area)

    @cached_property
    def adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_regions)]
        for lp in self.loops:
            adj[lp.inner].append((lp.outer, lp.index))
            adj[lp.outer].append((lp.inner, lp.index))
        return adj

    def _side(self, start: int, cut: int) -> set[int]:
        seen = {start}
        todo = deque([start])
        while todo:
            r = todo.popleft()
            for s, k in self.adjacency[r]:
                if k != cut and s not in seen:
                    seen.add(s)
                    todo.append(s)
        return seen

    def disk(self, loop: BoundaryLoop) -> frozenset:
        """Regions of the closed disk bounded by a contractible loop."""
        if not loop.contractible:
            raise ValueError(f"loop {loop.index} has winding {loop.winding}; it bounds no disk")
        if loop.index not in self._disks:
            a = self._side(loop.inner, loop.index)
            if loop.outer in a:
                raise TopologyError(f"contractible loop {loop.index} does not separate")
            b = set(range(self.n_regions)) - a
            chi_a = int(self.region_chi[list(a)].sum())
            chi_b = int(self.region_chi[list(b)].sum())
            if chi_a == 1 and chi_b == -1:
                self._disks[loop.index] = frozenset(a)
            elif chi_b == 1 and chi_a == -1:
                self._disks[loop.index] = frozenset(b)
            else:
                raise TopologyError(
                    f"sides of loop {loop.index} have Euler characteristics {chi_a}, {chi_b}"
                )
        return self._disks[loop.index]

    def triangle_mask(self, member: np.ndarray) -> np.ndarray:
        """Triangles carrying a positive-area part of a member region."""
        ok = self.part_region >= 0
        hit = np.zeros(self.part_region.shape, dtype=bool)
        hit[ok] = member[self.part_region[ok]]
        return (hit & (self.part_area > 0)).any(axis=1)


@dataclass(frozen=True, eq=False)
class SubSurface:
    """Union of closed regions of an arrangement."""

    arrangement: Arrangement
    member: np.ndarray

    @property
    def n(self) -> int:
        return self.arrangement.n

    @cached_property
    def measure(self) -> float:
        return float(self.arrangement.region_area[self.member].sum())

    @cached_property
    def boundary(self) -> tuple[BoundaryLoop, ...]:
        m = self.member
        return tuple(lp for lp in self.arrangement.loops if m[lp.inner] != m[lp.outer])

    @cached_property
    def triangles(self) -> np.ndarray:
        return np.flatnonzero(self.arrangement.triangle_mask(self.member))

    @property
    def is_cell_region(self) -> bool:
        return self.arrangement.level is None

    def with_member(self, member) -> "SubSurface":
        return SubSurface(self.arrangement, np.asarray(member, dtype=bool))

    def same_region(self, other: "SubSurface") -> bool:
        return self.n == other.n and np.array_equal(self.triangles, other.triangles)

    def integral(self, field_: TorusField) -> float:
        arr = self.arrangement
        grid = torus_grid(self.n)
        tri_mean = field_.flat_values[grid.tri_vertices].mean(axis=1)
        w = np.zeros(arr.part_region.shape)
        ok = arr.part_region >= 0
        w[ok] = self.member[arr.part_region[ok]]
        if arr.level is None:
            return float(grid.triangle_area * np.sum(w[:, 0] * tri_mean))
        if field_ is not arr.source and not np.array_equal(field_.values, arr.source.values):
            raise FieldError("a level region can only integrate the field that defines it")
        vals, ords, _ = _sorted_with_ids(field_)
        _, ival = clip_below(vals, ords, arr.level)
        below = ival
        above = tri_mean - ival
        return float(grid.triangle_area * np.sum(w[:, 0] * below + w[:, 1] * above))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "triangles": [int(t) for t in self.triangles],
            "boundary": [[[float(x) for x in pt] for pt in lp.points()] for lp in self.boundary],
            "measure": self.measure,
        }

    @classmethod
    def from_json(cls, data) -> "SubSurface":
        if isinstance(data, str):
            data = json.loads(data)
        return from_cells(int(data["n"]), data["triangles"])


# ---------------------------------------------------------------------------
# construction


def _sorted_with_ids(field_: TorusField):
    return field_.sorted_triangles


def _make_loops(n, labels, n_loops, seg, inner, outer):
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_loops + 1))
    disp = seg[:, 1] - seg[:, 0]
    wp = np.bincount(labels, weights=disp[:, 0], minlength=n_loops) / n
    wq = np.bincount(labels, weights=disp[:, 1], minlength=n_loops) / n
    loops = []
    for k in range(n_loops):
        idx = order[bounds[k] : bounds[k + 1]]
        w = (int(round(wp[k])), int(round(wq[k])))
        if abs(wp[k] - w[0]) > 1e-6 or abs(wq[k] - w[1]) > 1e-6:
            raise TopologyError(f"loop {k} does not close up (winding {wp[k]}, {wq[k]})")
        if w != (0, 0) and np.gcd(*w) != 1:
            raise TopologyError(f"loop {k} has non-primitive winding {w}")
        seg_k = seg[idx]
        seg_k.setflags(write=False)
        loops.append(BoundaryLoop(k, w, int(inner[k]), int(outer[k]), n, seg_k))
    return tuple(loops)


_NEIGHBOURS = ((1, 0), (0, 1), (1, 1))  # edge directions d = 0, 1, 2
_STRUCTURE = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)


def _periodic_label(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Components of a vertex mask under the triangulation's adjacency, wrapped."""
    lab, k = ndimage.label(mask, structure=_STRUCTURE)
    if k == 0:
        return lab - 1, 0
    a, b = [], []
    for d in _NEIGHBOURS:
        nb_lab = np.roll(lab, (-d[0], -d[1]), axis=(0, 1))
        both = (lab > 0) & (nb_lab > 0) & (lab != nb_lab)
        a.append(lab[both])
        b.append(nb_lab[both])
    a, b = np.concatenate(a), np.concatenate(b)
    if a.size:
        root = _components(k + 1, a, b)
        _, root = np.unique(root[1:], return_inverse=True)
        k = int(root.max()) + 1
        lab = np.where(lab > 0, root[np.maximum(lab - 1, 0)], -1)
    else:
        lab = lab - 1
    return lab, k


def sublevel(field_: TorusField, t: float) -> SubSurface:
    """The closed region ``{H <= t}`` for a regular value ``t``."""
    grid = field_.grid
    n = grid.n
    H = field_.values
    if np.any(H == t):
        raise RegularValueError(f"t={t!r} equals a vertex value")
    B = H < t
    lo_lab, k_lo = _periodic_label(B)
    hi_lab, k_hi = _periodic_label(~B)
    vlab = np.where(B, lo_lab, hi_lab + k_lo)
    n_reg = k_lo + k_hi

    chi = np.bincount(vlab.ravel(), minlength=n_reg)
    for d in _NEIGHBOURS:
        same = B == np.roll(B, (-d[0], -d[1]), axis=(0, 1))
        chi -= np.bincount(vlab[same], minlength=n_reg)
    B10 = np.roll(B, -1, axis=0)
    B11 = np.roll(B, (-1, -1), axis=(0, 1))
    B01 = np.roll(B, -1, axis=1)
    pure0 = (B == B10) & (B == B11)
    pure1 = (B == B11) & (B == B01)
    n_pure = np.bincount(vlab[pure0], minlength=n_reg) + np.bincount(vlab[pure1], minlength=n_reg)
    chi += n_pure

    flat_lab = vlab.ravel()
    tv = grid.tri_vertices
    area = n_pure * grid.triangle_area
    mixed = np.sort(
        np.concatenate([2 * np.flatnonzero(~pure0), 2 * np.flatnonzero(~pure1) + 1])
    )
    vals, ords, ids = _sorted_with_ids(field_)
    frac_m = clip_below(vals[mixed], ords[mixed], t)[0]
    lo_reg = flat_lab[ids[mixed, 0]]
    hi_reg = flat_lab[ids[mixed, 2]]
    area += np.bincount(lo_reg, weights=frac_m, minlength=n_reg) * grid.triangle_area
    area += np.bincount(hi_reg, weights=1.0 - frac_m, minlength=n_reg) * grid.triangle_area

    def parts():
        part_region = np.stack([flat_lab[ids[:, 0]], flat_lab[ids[:, 2]]], axis=1)
        below_t = B.ravel()[tv]
        frac = below_t.all(axis=1).astype(float)
        frac[mixed] = frac_m
        part_region[frac <= 0, 0] = -1
        part_region[frac >= 1, 1] = -1
        return part_region, np.stack([frac, 1.0 - frac], axis=1) * grid.triangle_area

    loops = ()
    if mixed.size:
        flat = H.ravel()
        below = B.ravel()
        te = grid.tri_edges[mixed]
        ev = grid.edge_vertices
        crossing = below[ev[te, 0]] != below[ev[te, 1]]
        # two crossing edges per mixed triangle
        pair = np.where(crossing[:, :, None], te[:, :, None], -1)[:, :, 0]
        pair = np.sort(pair, axis=1)[:, 1:]
        cross, inv = np.unique(pair, return_inverse=True)
        inv = inv.reshape(pair.shape)
        elab = _components(cross.size, inv[:, 0], inv[:, 1])
        n_loops = int(elab.max()) + 1

        mb = below[tv[mixed]]
        iso = np.where(mb[:, 0] != mb[:, 1], np.where(mb[:, 0] != mb[:, 2], 0, 1), 2)
        r = np.arange(mixed.size)
        k0, k1, k2 = iso, (iso + 1) % 3, (iso + 2) % 3
        off = grid.tri_offsets[mixed].astype(float)
        hv = flat[tv[mixed]]

        def point(a, b):
            s = (t - hv[r, a]) / (hv[r, b] - hv[r, a])
            return off[r, a] + s[:, None] * (off[r, b] - off[r, a])

        p1 = point(k0, k1)
        p2 = point(k2, k0)
        iso_below = mb[r, iso]
        start = np.where(iso_below[:, None], p1, p2)
        end = np.where(iso_below[:, None], p2, p1)
        seg = np.stack([start, end], axis=1)
        seg_lab = elab[inv[:, 0]]
        eu, ew = ev[cross, 0], ev[cross, 1]
        lo = np.where(below[eu], eu, ew)
        hi = np.where(below[eu], ew, eu)
        inner = np.zeros(n_loops, dtype=np.int64)
        outer = np.zeros(n_loops, dtype=np.int64)
        inner[elab] = flat_lab[lo]
        outer[elab] = flat_lab[hi]
        loops = _make_loops(n, seg_lab, n_loops, seg, inner, outer)
    arr = Arrangement(n, area, chi, loops, parts, float(t), field_)
    member = np.zeros(n_reg, dtype=bool)
    member[:k_lo] = True
    return SubSurface(arr, member)


def vertex_stars(n: int) -> np.ndarray:
    """The 6 triangles around each vertex in counter-clockwise order."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c = lambda a, b: ((a % n) * n + (b % n)).ravel()
    return np.stack(
        [
            2 * c(i, j),
            2 * c(i, j) + 1,
            2 * c(i - 1, j),
            2 * c(i - 1, j - 1) + 1,
            2 * c(i - 1, j - 1),
            2 * c(i, j - 1) + 1,
        ],
        axis=1,
    )


def pinch_vertices(n: int, mask: np.ndarray) -> np.ndarray:
    s = mask[vertex_stars(n)]
    changes = (s != np.roll(s, 1, axis=1)).sum(axis=1)
    return np.flatnonzero(changes > 2)


def normalize_cells(n: int, mask: np.ndarray, mode: str = "close") -> np.ndarray:
    """Remove pinch points: ``close`` adds, ``open`` removes the offending stars."""
    mask = np.array(mask, dtype=bool)
    stars = vertex_stars(n)
    while True:
        bad = pinch_vertices(n, mask)
        if bad.size == 0:
            return mask
        mask[stars[bad].ravel()] = mode == "close"


def _as_mask(n: int, cells) -> np.ndarray:
    cells = np.asarray(cells)
    if cells.dtype == bool:
        if cells.shape != (2 * n * n,):
            raise FieldError(f"cell mask has shape {cells.shape}, expected {(2 * n * n,)}")
        return cells.copy()
    mask = np.zeros(2 * n * n, dtype=bool)
    mask[cells.astype(np.int64)] = True
    return mask


def from_cells(n: int, cells, normalize: str | None = None) -> SubSurface:
    """Closed union of grid triangles (ids or boolean mask)."""
    grid = torus_grid(n)
    mask = _as_mask(n, cells)
    if normalize:
        mask = normalize_cells(n, mask, normalize)
    bad = pinch_vertices(n, mask)
    if bad.size:
        raise TopologyError(f"cell region is pinched at {bad.size} vertices, e.g. {bad[:4]}")
    et = grid.edge_triangles
    same = mask[et[:, 0]] == mask[et[:, 1]]
    tlab = _components(grid.n_triangles, et[same, 0], et[same, 1])
    n_reg = int(tlab.max()) + 1

    stars = vertex_stars(n)
    sm = mask[stars]
    first_w = np.where(sm.any(axis=1), np.argmax(sm, axis=1), 0)
    vlab = tlab[stars[np.arange(stars.shape[0]), first_w]]
    elab = np.where(mask[et[:, 0]] | ~mask[et[:, 1]], tlab[et[:, 0]], tlab[et[:, 1]])
    chi = (
        np.bincount(vlab, minlength=n_reg)
        - np.bincount(elab, minlength=n_reg)
        + np.bincount(tlab, minlength=n_reg)
    )
    area = np.bincount(tlab, minlength=n_reg) * grid.triangle_area

    bnd = np.flatnonzero(~same)
    if bnd.size:
        t_in = np.where(mask[et[bnd, 0]], et[bnd, 0], et[bnd, 1])
        t_out = np.where(mask[et[bnd, 0]], et[bnd, 1], et[bnd, 0])
        k = np.argmax(grid.tri_edges[t_in] == bnd[:, None], axis=1)
        off = grid.tri_offsets[t_in].astype(float)
        r = np.arange(bnd.size)
        seg = np.stack([off[r, k], off[r, (k + 1) % 3]], axis=1)
        ev = grid.edge_vertices[bnd]
        lab = _components(grid.n_vertices, ev[:, 0], ev[:, 1])[ev[:, 0]]
        _, lab = np.unique(lab, return_inverse=True)
        n_loops = int(lab.max()) + 1
        inner = np.zeros(n_loops, dtype=np.int64)
        outer = np.zeros(n_loops, dtype=np.int64)
        inner[lab] = tlab[t_in]
        outer[lab] = tlab[t_out]
        loops = _make_loops(n, lab, n_loops, seg, inner, outer)
    else:
        loops = ()
    part_region = np.stack([tlab, np.full_like(tlab, -1)], axis=1)
    part_area = np.zeros(part_region.shape)
    part_area[:, 0] = grid.triangle_area
    arr = Arrangement(n, area, chi, loops, lambda: (part_region, part_area))
    member = np.zeros(n_reg, dtype=bool)
    member[tlab[mask]] = True
    return SubSurface(arr, member)


def whole_torus(n: int) -> SubSurface:
    return from_cells(n, np.ones(2 * n * n, dtype=bool))


def empty_surface(n: int) -> SubSurface:
    return from_cells(n, np.zeros(2 * n * n, dtype=bool))


def cell_mask(W: SubSurface) -> np.ndarray:
    if not W.is_cell_region:
        raise ValueError("cell operations need a cell region")
    return W.arrangement.triangle_mask(W.member)


def cell_complement(W: SubSurface) -> SubSurface:
    """Closure of the complement of a cell region."""
    return from_cells(W.n, ~cell_mask(W))


def cell_union(*regions: SubSurface) -> SubSurface:
    mask = np.zeros(2 * regions[0].n ** 2, dtype=bool)
    for W in regions:
        mask |= cell_mask(W)
    return from_cells(regions[0].n, mask)


def cells_disjoint(A: SubSurface, B: SubSurface) -> bool:
    """True when the closed regions share no vertex."""
    grid = torus_grid(A.n)
    va = np.zeros(grid.n_vertices, dtype=bool)
    va[grid.tri_vertices[cell_mask(A)].ravel()] = True
    return not va[grid.tri_vertices[cell_mask(B)].ravel()].any()


# ---------------------------------------------------------------------------
# disks, maximality, sides, regularization


def fill_disk(W: SubSurface, loop: BoundaryLoop) -> SubSurface:
    """The closed disk ``D(loop)``, on the same arrangement as ``W``."""
    member = np.zeros(W.arrangement.n_regions, dtype=bool)
    member[list(W.arrangement.disk(loop))] = True
    return W.with_member(member)


def maximal_loops(W: SubSurface) -> list[BoundaryLoop]:
    arr = W.arrangement
    contr = [lp for lp in W.boundary if lp.contractible]
    disks = {lp.index: arr.disk(lp) for lp in contr}
    out = []
    for lp in contr:
        d = disks[lp.index]
        if not any(o.index != lp.index and d < disks[o.index] for o in contr):
            out.append(lp)
    return out


def classify_side(W: SubSurface, loop: BoundaryLoop) -> str:
    """``exterior`` when the collar of ``W`` along the loop lies inside ``D(loop)``."""
    if loop.index >= len(W.arrangement.loops) or W.arrangement.loops[loop.index] is not loop:
        raise ValueError("loop does not belong to this subsurface's arrangement")
    if W.member[loop.inner] == W.member[loop.outer]:
        raise ValueError(f"loop {loop.index} is not on the boundary")
    side = loop.inner if W.member[loop.inner] else loop.outer
    return EXTERIOR if side in W.arrangement.disk(loop) else INTERIOR


@dataclass(frozen=True, eq=False)
class RegularizedSurface:
    region: SubSurface
    provenance: tuple  # (loop, "filled" | "removed" | "kept")

    @property
    def measure(self) -> float:
        return self.region.measure


def regularize(W: SubSurface) -> RegularizedSurface:
    """Fill maximal interior disks and cut maximal exterior disks, in one batch."""
    arr = W.arrangement
    member = W.member.copy()
    maximal = maximal_loops(W)
    action = {}
    for lp in maximal:
        act = "removed" if classify_side(W, lp) == EXTERIOR else "filled"
        action[lp.index] = (act, arr.disk(lp))
    for act, disk in action.values():
        member[list(disk)] = act == "filled"
    prov = []
    for lp in W.boundary:
        if lp.index in action:
            prov.append((lp, action[lp.index][0]))
        elif lp.contractible:
            d = arr.disk(lp)
            outer = next(a for a, dd in action.values() if d <= dd)
            prov.append((lp, outer))
        else:
            prov.append((lp, "kept"))
    out = W.with_member(member)
    left = [lp.index for lp in out.boundary if lp.contractible]
    if left:
        raise TopologyError(f"contractible loops {left} survive regularization")
    return RegularizedSurface(out, tuple(prov))


def tau(W: SubSurface) -> float:
    """Topological measure: area of the regularized subsurface."""
    return regularize(W).measure
