import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusqs.invariance_harness import LinearAnnulus, disk_cells, random_disk
from torusqs.surface_topology import (
    CONTRACTIBLE,
    ESSENTIAL,
    EXTERIOR,
    INTERIOR,
    SubSurface,
    TopologyError,
    cell_complement,
    cell_mask,
    classify_loop,
    classify_side,
    fill_disk,
    from_cells,
    maximal_loops,
    regularize,
    sublevel,
    tau,
    whole_torus,
)
from torusqs.torus_field import RegularValueError, build_field

N = 32


def cell(i, j, n=N):
    """The two triangles of grid square (i, j)."""
    k = 2 * (i * n + j)
    return [k, k + 1]


def mask_of(ids, n=N):
    m = np.zeros(2 * n * n, dtype=bool)
    m[ids] = True
    return m


def test_whole_and_empty():
    assert tau(whole_torus(N)) == 1.0
    W = whole_torus(N)
    assert W.boundary == () and W.measure == pytest.approx(1.0, abs=1e-12)
    assert tau(from_cells(N, [])) == 0.0


def test_horizontal_circle_is_essential():
    W = LinearAnnulus((1, 0), 0.25, 0.25).region(N)
    assert sorted(lp.winding for lp in W.boundary) == [(-1, 0), (1, 0)]
    assert all(classify_loop(lp) == ESSENTIAL for lp in W.boundary)


def test_diagonal_circle_is_essential():
    W = LinearAnnulus((1, 1), 0.0, 0.5).region(N)
    assert {abs(w) for lp in W.boundary for w in lp.winding} == {1}
    assert all(classify_loop(lp) == ESSENTIAL for lp in W.boundary)


def test_square_around_vertex_is_contractible():
    # the six triangles around one vertex
    from torusqs.surface_topology import vertex_stars

    W = from_cells(N, vertex_stars(N)[5 * N + 7])
    (loop,) = W.boundary
    assert loop.winding == (0, 0) and classify_loop(loop) == CONTRACTIBLE


def test_single_cell_disk_from_both_sides():
    W = from_cells(N, cell(3, 4))
    (loop,) = W.boundary
    D = fill_disk(W, loop)
    assert D.measure == pytest.approx(1 / N**2, abs=1e-15)
    assert classify_side(W, loop) == EXTERIOR

    C = cell_complement(W)
    (loop_c,) = C.boundary
    Dc = fill_disk(C, loop_c)
    assert np.array_equal(cell_mask(Dc), cell_mask(W))
    assert classify_side(C, loop_c) == INTERIOR


def test_disk_fill_of_level_loop():
    f = build_field(128, "cos(2*pi*q)+0.5*cos(2*pi*p)")
    W = sublevel(f, -0.99)
    (loop,) = W.boundary
    assert loop.contractible
    assert fill_disk(W, loop).measure == pytest.approx(W.measure, abs=1e-12)
    assert classify_side(W, loop) == EXTERIOR
    assert tau(W) == 0.0


def test_vertex_value_level_rejected():
    f = build_field(128, "cos(2*pi*q)+0.5*cos(2*pi*p)")
    with pytest.raises(RegularValueError):
        sublevel(f, -1.0)  # an exact vertex value on this grid


def test_sublevel_examples():
    f = build_field(128, "sin(2*pi*q)")
    top = sublevel(f, 1.5)
    assert top.measure == pytest.approx(1.0, abs=1e-12) and top.boundary == ()
    A = sublevel(f, 0.0 + 1e-9)
    assert A.measure == pytest.approx(0.5, abs=5 / 128)
    assert sorted(lp.winding for lp in A.boundary) == [(-1, 0), (1, 0)]
    assert tau(A) == pytest.approx(A.measure, abs=1e-12)


def test_annulus_has_no_maximal_loops():
    assert maximal_loops(LinearAnnulus((0, 1), 0.1, 0.3).region(N)) == []


def test_two_disks_both_maximal():
    m = disk_cells(N, (0.25, 0.25), 0.1) | disk_cells(N, (0.75, 0.7), 0.1)
    W = from_cells(N, m)
    assert len(maximal_loops(W)) == 2
    assert tau(W) == 0.0


def test_contractible_annulus():
    big = disk_cells(N, (0.5, 0.5), 0.3)
    small = disk_cells(N, (0.5, 0.5), 0.12)
    W = from_cells(N, big & ~small, normalize="close")
    (outer,) = maximal_loops(W)
    assert classify_side(W, outer) == EXTERIOR
    inner = next(lp for lp in W.boundary if lp.index != outer.index)
    assert classify_side(W, inner) == INTERIOR
    assert fill_disk(W, inner).measure < fill_disk(W, outer).measure
    assert tau(W) == 0.0


def test_regularize_disk_and_complement():
    D = from_cells(N, disk_cells(N, (0.3, 0.6), 0.2))
    assert regularize(D).measure == 0.0
    assert regularize(cell_complement(D)).measure == pytest.approx(1.0, abs=1e-12)
    assert tau(cell_complement(D)) == pytest.approx(1.0, abs=1e-12)


def test_regularize_punctured_annulus_plus_disk():
    n = 64
    A = LinearAnnulus((1, 0), 0.25, 0.5).cells(n)
    hole = disk_cells(n, (0.5, 0.5), 0.08)
    extra = disk_cells(n, (0.5, 0.05), 0.05)
    assert not (hole & ~A).any() and not (extra & A).any()
    W = from_cells(n, (A & ~hole) | extra, normalize="close")
    R = regularize(W)
    assert np.array_equal(cell_mask(R.region), A)
    actions = sorted(a for _, a in R.provenance)
    assert actions == ["filled", "kept", "kept", "removed"]
    # every boundary loop of the result is a loop of the input
    assert {lp.index for lp in R.region.boundary} <= {lp.index for lp in W.boundary}


def test_pinched_region_rejected():
    # two squares meeting at a single vertex
    m = mask_of(cell(3, 3) + cell(4, 4))
    with pytest.raises(TopologyError):
        from_cells(N, m)
    W = from_cells(N, m, normalize="close")
    assert W.measure > 2 / N**2


def test_json_round_trip():
    W = from_cells(N, disk_cells(N, (0.4, 0.4), 0.15))
    data = json.loads(json.dumps(W.to_json()))
    assert data["triangles"] == sorted(data["triangles"])
    assert data["measure"] == pytest.approx(W.measure)
    W2 = SubSurface.from_json(data)
    assert np.array_equal(cell_mask(W2), cell_mask(W))


# --- topological measure properties on generated cell regions ---------------

seeds = st.integers(0, 10_000)


@given(seed=seeds)
@settings(max_examples=30, deadline=None)
def test_complement_rule(seed):
    rng = np.random.default_rng(seed)
    m = random_disk(rng, N) | LinearAnnulus((1, 1), 0.5, 0.25).cells(N)
    W = from_cells(N, m, normalize="close")
    assert abs(tau(W) + tau(cell_complement(W)) - 1.0) <= 1e-9
    assert abs(W.measure + cell_complement(W).measure - 1.0) <= 1e-12


@given(seed=seeds)
@settings(max_examples=30, deadline=None)
def test_monotone_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    m = random_disk(rng, N)
    if rng.integers(2):
        m = ~m
    W = from_cells(N, m, normalize="close")
    V = from_cells(N, cell_mask(W) | random_disk(rng, N), normalize="close")
    assert tau(W) <= tau(V) + 1e-9
    R = regularize(W).region
    R2 = regularize(from_cells(N, cell_mask(R))).region
    assert np.array_equal(cell_mask(R), cell_mask(R2))


@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_everything_inside_a_disk_is_exterior(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, 2)
    outer = disk_cells(N, c, 0.35)
    inner = random_disk(rng, N) & outer
    W = from_cells(N, inner, normalize="close")
    W = from_cells(N, cell_mask(W) & outer, normalize="open")
    for lp in maximal_loops(W):
        assert classify_side(W, lp) == EXTERIOR
    assert tau(W) == 0.0


@given(shift=st.tuples(st.integers(0, N - 1), st.integers(0, N - 1)), seed=seeds)
@settings(max_examples=20, deadline=None)
def test_tau_translation_invariant(shift, seed):
    rng = np.random.default_rng(seed)
    m = random_disk(rng, N) | LinearAnnulus((0, 1), 0.0, 0.25).cells(N)
    W = from_cells(N, m, normalize="close")
    moved = np.roll(cell_mask(W).reshape(N, N, 2), shift, axis=(0, 1)).ravel()
    assert tau(from_cells(N, moved)) == tau(W)
