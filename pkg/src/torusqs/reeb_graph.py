"""Reeb graph of a PL torus field and its cycle/tree decomposition.

The torus is cut into *pieces*: a piece is a triangle intersected with an
open slab between two consecutive critical levels.  Pieces of the same slab
that share an edge segment lie on the same level-set family; pieces on
either side of a critical level are glued when the level segment between
them belongs to a regular contour rather than to the critical one.  The
glued classes are the Reeb arcs, the critical vertices are the nodes, and
the piece-to-arc labelling is the quotient map.  Piece areas and integrals
are exact, so every region measure of the decomposition is exact as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .surface_topology import SubSurface, TopologyError, from_cells
from .torus_field import TorusField, clip_below, critical_points, sorted_triangle_data


@dataclass(frozen=True)
class ReebNode:
    id: int
    vertex: int
    value: float
    order: int
    degree: int


@dataclass(frozen=True)
class ReebArc:
    id: int
    lo: int  # node ids
    hi: int
    measure: float
    integral: float  # of H - shift over the preimage


@dataclass(frozen=True, eq=False)
class ReebGraph:
    source: TorusField = dc_field(repr=False)
    nodes: tuple[ReebNode, ...]
    arcs: tuple[ReebArc, ...]
    shift: float
    # quotient map on pieces
    piece_tri: np.ndarray = dc_field(repr=False)
    piece_lo: np.ndarray = dc_field(repr=False)  # critical index of slab bottom
    piece_arc: np.ndarray = dc_field(repr=False)
    piece_area: np.ndarray = dc_field(repr=False)
    piece_integral: np.ndarray = dc_field(repr=False)
    crit_values: np.ndarray = dc_field(repr=False)
    crit_orders: np.ndarray = dc_field(repr=False)

    @property
    def betti(self) -> int:
        return len(self.arcs) - len(self.nodes) + 1

    @property
    def total_measure(self) -> float:
        return float(sum(a.measure for a in self.arcs))

    def node_value(self, node_id: int) -> float:
        return self.nodes[node_id].value

    def arcs_at(self, node_id: int) -> list[ReebArc]:
        return [a for a in self.arcs if node_id in (a.lo, a.hi)]

    def components_at(self, t: float) -> int:
        """Arcs whose open value interval contains ``t``."""
        return sum(self.nodes[a.lo].value < t < self.nodes[a.hi].value for a in self.arcs)

    def to_json(self, decomposition: "CycleTreeDecomposition | None" = None) -> dict:
        out = {
            "nodes": [{"id": v.id, "value": v.value, "degree": v.degree} for v in self.nodes],
            "edges": [
                {
                    "id": a.id,
                    "endpoints": [a.lo, a.hi],
                    "value_interval": [self.nodes[a.lo].value, self.nodes[a.hi].value],
                    "measure": a.measure,
                }
                for a in self.arcs
            ],
        }
        if decomposition is not None:
            out["cycle"] = sorted(decomposition.cycle_arcs)
            out["trees"] = [
                {
                    "attachment_node": tr.attachment,
                    "alpha": tr.alpha,
                    "edge_ids": sorted(tr.arcs),
                    "region_measure": tr.measure,
                }
                for tr in decomposition.trees
            ]
        return out


def _span(orders: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """First and last slab index met by open order intervals ``(lo, hi)``."""
    return (
        np.searchsorted(orders, lo, side="right") - 1,
        np.searchsorted(orders, hi, side="left") - 1,
    )


def _expand(start, stop):
    count = stop - start + 1
    owner = np.repeat(np.arange(start.size), count)
    first = np.repeat(np.cumsum(count) - count, count)
    slab = np.repeat(start, count) + (np.arange(owner.size) - first)
    return owner, slab


def build_reeb(field_: TorusField) -> ReebGraph:
    grid = field_.grid
    crit = critical_points(field_)
    c_ord = np.array([cp.order for cp in crit])
    c_val = np.array([cp.value for cp in crit])
    c_vtx = np.array([cp.vertex for cp in crit])
    K = len(crit)
    if K < 2:
        raise TopologyError("field has fewer than two critical points")

    vals, ords = sorted_triangle_data(field_)
    t_lo, t_hi = ords[:, 0], ords[:, 2]
    a0, a1 = _span(c_ord, t_lo, t_hi)
    cnt = a1 - a0 + 1
    pstart = np.cumsum(cnt) - cnt
    p_tri, p_slab = _expand(a0, a1)
    p_slab = p_slab.astype(np.int64)
    n_pieces = p_tri.size

    def piece(tri, slab):
        return pstart[tri] + slab - a0[tri]

    # exact piece areas and integrals (shifted values)
    shift = float(field_.values.flat[0])
    pv = vals[p_tri] - shift
    po = ords[p_tri]
    f_lo, i_lo = clip_below(pv, po, c_val[p_slab] - shift, c_ord[p_slab])
    f_hi, i_hi = clip_below(pv, po, c_val[p_slab + 1] - shift, c_ord[p_slab + 1])
    area = (f_hi - f_lo) * grid.triangle_area
    integral = (i_hi - i_lo) * grid.triangle_area

    ua, ub = [], []
    # same slab, across shared edges
    ev, et = grid.edge_vertices, grid.edge_triangles
    eo = np.sort(field_.flat_order[ev], axis=1)
    b0, b1 = _span(c_ord, eo[:, 0], eo[:, 1])
    e_idx, e_slab = _expand(b0, b1)
    ua.append(piece(et[e_idx, 0], e_slab))
    ub.append(piece(et[e_idx, 1], e_slab))
    estart = np.cumsum(b1 - b0 + 1) - (b1 - b0 + 1)

    # Level-a contours, all levels at once.  Graph nodes are the expansion
    # slots (edge, slab) standing for "edge crosses critical level slab" plus
    # one node per critical vertex; each triangle strictly crossing level a
    # links its two crossing edges (or its one crossing edge and v_a).
    vnode0 = e_idx.size
    x = np.flatnonzero(p_slab > a0[p_tri])  # pieces whose lower level is crossed
    x_tri, x_lvl = p_tri[x], p_slab[x]
    te = grid.tri_edges[x_tri]
    lvl = x_lvl[:, None]
    cr = (b0[te] < lvl) & (lvl <= b1[te])
    slot = np.where(cr, estart[te] + lvl - b0[te], np.iinfo(np.int64).max)
    slot = np.sort(slot, axis=1)
    has_v = ords[x_tri, 1] == c_ord[x_lvl]
    end0 = slot[:, 0]
    end1 = np.where(has_v, vnode0 + x_lvl, slot[:, 1])
    g = coo_matrix(
        (np.ones(x.size, dtype=np.int8), (end0, end1)), shape=(vnode0 + K, vnode0 + K)
    )
    lab = connected_components(g, directed=False)[1]
    on_contour = lab[end0] == lab[vnode0 + x_lvl]
    reg = ~on_contour
    ua.append(piece(x_tri[reg], x_lvl[reg] - 1))
    ub.append(piece(x_tri[reg], x_lvl[reg]))

    # pieces touching each critical contour from above (up) and below (down)
    t_idx = np.arange(t_lo.size)
    lo_crit = c_ord[a0] == t_lo  # lowest vertex is critical: slab a0 starts there
    hi_lvl = a1 + 1
    hi_crit = (hi_lvl < K) & (c_ord[np.minimum(hi_lvl, K - 1)] == t_hi)
    tc, lc = x_tri[on_contour], x_lvl[on_contour]
    up_tri = np.concatenate([tc, t_idx[lo_crit]])
    up_lvl = np.concatenate([lc, a0[lo_crit]])
    keep_up = up_lvl < K - 1
    up_tri, up_lvl = up_tri[keep_up], up_lvl[keep_up]
    dn_tri = np.concatenate([tc, t_idx[hi_crit]])
    dn_lvl = np.concatenate([lc, hi_lvl[hi_crit]])
    keep_dn = dn_lvl > 0
    dn_tri, dn_lvl = dn_tri[keep_dn], dn_lvl[keep_dn]

    ua, ub = np.concatenate(ua), np.concatenate(ub)
    g = coo_matrix((np.ones(ua.size, dtype=np.int8), (ua, ub)), shape=(n_pieces, n_pieces))
    n_arcs, p_arc = connected_components(g, directed=False)

    def attach(tri, level, slab_offset, what):
        pairs = np.unique(
            np.stack([p_arc[piece(tri, level + slab_offset)], level], axis=1), axis=0
        )
        if pairs.size and np.any(np.diff(pairs[:, 0]) == 0):
            raise TopologyError(f"an arc {what} two critical contours")
        node = np.full(n_arcs, -1)
        node[pairs[:, 0]] = pairs[:, 1]
        return node

    lo_node = attach(up_tri, up_lvl, 0, "leaves upward from")
    hi_node = attach(dn_tri, dn_lvl, -1, "enters")
    if (lo_node < 0).any() or (hi_node < 0).any():
        raise TopologyError("some Reeb arc is not attached to critical contours at both ends")

    # smooth degree-2 nodes by concatenating their two arcs
    deg = np.bincount(lo_node, minlength=K) + np.bincount(hi_node, minlength=K)
    keep = np.flatnonzero(deg != 2)
    through = deg == 2
    n_up = np.bincount(lo_node, minlength=K)
    if np.any(through & (n_up != 1)):
        bad = int(np.flatnonzero(through & (n_up != 1))[0])
        raise TopologyError(f"degree-2 node {bad} is not a pass-through")
    above_of = np.full(K, -1)
    above_of[lo_node] = np.arange(n_arcs)
    below = np.flatnonzero(through[hi_node])
    joins = coo_matrix(
        (np.ones(below.size, dtype=np.int8), (below, above_of[hi_node[below]])),
        shape=(n_arcs, n_arcs),
    )
    n_new, arc_of = connected_components(joins, directed=False)
    node_id = np.full(K, -1)
    node_id[keep] = np.arange(keep.size)
    new_lo = np.full(n_new, -1)
    new_hi = np.full(n_new, -1)
    ok = ~through[lo_node]
    new_lo[arc_of[ok]] = node_id[lo_node[ok]]
    ok = ~through[hi_node]
    new_hi[arc_of[ok]] = node_id[hi_node[ok]]
    roots = np.arange(n_new)
    p_arc = arc_of[p_arc]
    m = np.bincount(p_arc, weights=area, minlength=roots.size)
    s = np.bincount(p_arc, weights=integral, minlength=roots.size)
    arcs = tuple(
        ReebArc(k, int(new_lo[k]), int(new_hi[k]), float(m[k]), float(s[k])) for k in range(roots.size)
    )
    ndeg = np.bincount(new_lo, minlength=keep.size) + np.bincount(new_hi, minlength=keep.size)
    nodes = tuple(
        ReebNode(k, int(c_vtx[a]), float(c_val[a]), int(c_ord[a]), int(ndeg[k]))
        for k, a in enumerate(keep)
    )
    graph = ReebGraph(
        field_, nodes, arcs, shift, p_tri, p_slab, p_arc, area, integral, c_val, c_ord
    )
    ncomp = connected_components(
        coo_matrix(
            (np.ones(len(arcs)), (new_lo, new_hi)), shape=(len(nodes), len(nodes))
        ),
        directed=False,
    )[0]
    if ncomp != 1 or graph.betti != 1:
        raise TopologyError(
            f"Reeb graph has {ncomp} components and first Betti number {graph.betti}; expected 1 and 1"
        )
    return graph


@dataclass(frozen=True, eq=False)
class Tree:
    attachment: int  # node id of s_j on the cycle
    alpha: float
    arcs: frozenset
    measure: float
    integral: float  # of H - shift over D_j
    graph: ReebGraph = dc_field(repr=False)

    @property
    def term(self) -> float:
        """Integral of ``alpha - H`` over the tree region."""
        return (self.alpha - self.graph.shift) * self.measure - self.integral

    def piece_mask(self) -> np.ndarray:
        return np.isin(self.graph.piece_arc, list(self.arcs))

    def cell_region(self) -> SubSurface:
        """Triangles lying entirely inside ``D_j`` (an inner cell approximation).

        Triangles that merely overlap the region are left out: the closure of
        ``D_j`` can pinch at the attachment saddle, and keeping those
        triangles would close the pinch into an essential annulus.
        """
        g = self.graph
        n = g.source.n
        sel = self.piece_mask()
        share = np.bincount(g.piece_tri[sel], weights=g.piece_area[sel], minlength=2 * n * n)
        full = g.source.grid.triangle_area * (1 - 1e-9)
        return from_cells(n, share >= full, normalize="open")


@dataclass(frozen=True, eq=False)
class CycleTreeDecomposition:
    graph: ReebGraph = dc_field(repr=False)
    cycle_nodes: frozenset
    cycle_arcs: frozenset
    trees: tuple[Tree, ...]

    @property
    def k(self) -> int:
        return len(self.trees)

    @cached_property
    def cycle_piece_mask(self) -> np.ndarray:
        return np.isin(self.graph.piece_arc, list(self.cycle_arcs))

    @property
    def cycle_measure(self) -> float:
        return float(sum(self.graph.arcs[a].measure for a in self.cycle_arcs))

    @property
    def cycle_integral(self) -> float:
        return float(sum(self.graph.arcs[a].integral for a in self.cycle_arcs))

    def sublevel_cycle_measure(self, t: float) -> float:
        """Area of ``{H <= t}`` inside the cycle region ``S`` (``t`` regular)."""
        g = self.graph
        sel = self.cycle_piece_mask
        tri = g.piece_tri[sel]
        lo = g.piece_lo[sel]
        vals, ords = sorted_triangle_data(g.source)
        v, o = vals[tri], ords[tri]
        f_lo, _ = clip_below(v, o, g.crit_values[lo], g.crit_orders[lo])
        f_t, _ = clip_below(v, o, np.full(tri.size, t))
        span = g.piece_area[sel] / g.source.grid.triangle_area
        part = np.clip(f_t - f_lo, 0.0, span)
        return float(part.sum() * g.source.grid.triangle_area)


def decompose(graph: ReebGraph) -> CycleTreeDecomposition:
    """Strip leaves until the unique cycle remains; the stripped parts are the trees."""
    V = len(graph.nodes)
    incident: list[list[int]] = [[] for _ in range(V)]
    for a in graph.arcs:
        incident[a.lo].append(a.id)
        incident[a.hi].append(a.id)
    deg = np.array([len(x) for x in incident])
    alive_arc = np.ones(len(graph.arcs), dtype=bool)
    alive_node = np.ones(V, dtype=bool)
    stack = [v for v in range(V) if deg[v] == 1]
    while stack:
        v = stack.pop()
        if not alive_node[v] or deg[v] != 1:
            continue
        alive_node[v] = False
        (arc,) = [a for a in incident[v] if alive_arc[a]]
        alive_arc[arc] = False
        deg[v] -= 1
        w = graph.arcs[arc].lo if graph.arcs[arc].hi == v else graph.arcs[arc].hi
        deg[w] -= 1
        if deg[w] == 1:
            stack.append(w)
    cyc_nodes = np.flatnonzero(alive_node)
    cyc_arcs = np.flatnonzero(alive_arc)
    if cyc_nodes.size == 0 or cyc_nodes.size != cyc_arcs.size or np.any(deg[cyc_nodes] != 2):
        raise TopologyError("residue after stripping leaves is not a single cycle")

    # removed arcs grouped by the cycle node they hang from
    parent = list(range(V))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a in np.flatnonzero(~alive_arc):
        arc = graph.arcs[a]
        parent[find(arc.lo)] = find(arc.hi)
    groups: dict[int, list[int]] = {}
    for a in np.flatnonzero(~alive_arc):
        groups.setdefault(find(graph.arcs[a].lo), []).append(int(a))
    trees = []
    for root, arcs in groups.items():
        attach = [v for v in cyc_nodes if find(v) == root]
        if len(attach) != 1:
            raise TopologyError(f"tree touches the cycle at {len(attach)} nodes")
        s = int(attach[0])
        trees.append(
            Tree(
                s,
                graph.nodes[s].value,
                frozenset(arcs),
                float(sum(graph.arcs[a].measure for a in arcs)),
                float(sum(graph.arcs[a].integral for a in arcs)),
                graph,
            )
        )
    trees.sort(key=lambda tr: (tr.alpha, graph.nodes[tr.attachment].order))
    return CycleTreeDecomposition(
        graph, frozenset(int(v) for v in cyc_nodes), frozenset(int(a) for a in cyc_arcs), tuple(trees)
    )
