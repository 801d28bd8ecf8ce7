import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusqs import invariance_harness as ih
from torusqs.invariance_harness import (
    SHEAR,
    LinearAnnulus,
    PLReparam,
    check_annulus_values,
    check_disk_vanishing,
    check_monotone,
    check_normalization,
    check_quasilinearity,
    check_symplectic_invariance,
    check_tau_axioms,
    compose,
    default_maps,
    disk_cells,
    erode_cells,
    refine_cells,
    unit_lipschitz_field,
)
from torusqs.surface_topology import from_cells, tau
from torusqs.torus_field import (
    LatticeSymplectomorphism,
    build_field,
    generate_field,
    lipschitz_constant,
)

COS = "cos(2*pi*q)+0.5*cos(2*pi*p)"


def test_normalization():
    rep = check_normalization(32)
    assert rep.ok and rep.cases == 1


def test_identity_plus_constant():
    H = build_field(64, COS)
    lo, hi = H.min_value, H.max_value
    rep = check_quasilinearity(H, PLReparam.identity(lo, hi), PLReparam.constant(0.3, lo, hi))
    assert rep.ok and rep.cases == 4


def test_identity_plus_identity():
    H = generate_field(2, 2, 64)
    ident = PLReparam.identity(H.min_value, H.max_value)
    assert check_quasilinearity(H, ident, ident).ok


def test_random_reparams_on_cos_field():
    H = build_field(64, COS)
    rng = np.random.default_rng(3)
    phi = PLReparam.random(rng, H.min_value, H.max_value)
    psi = PLReparam.random(rng, H.min_value, H.max_value)
    assert check_quasilinearity(H, phi, psi).ok


def test_report_records_failures():
    rep = ih.Report("x")
    assert rep.record(1, {}, 1.0, 1.0, 0.0)
    assert not rep.record(2, {"a": 1}, 1.0, 2.0, 0.5)
    assert rep.cases == 2 and not rep.ok
    assert rep.failures == [{"seed": 2, "inputs": {"a": 1}, "lhs": 1.0, "rhs": 2.0, "tol": 0.5}]
    assert set(rep.to_json()) == {"battery", "cases", "failures", "elapsed"}


def test_plreparam_validation():
    with pytest.raises(ValueError):
        PLReparam([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        PLReparam([0.0], [1.0])
    phi = PLReparam([0.0, 1.0, 2.0], [0.0, 3.0, 1.0])
    assert phi.lipschitz == 3.0
    assert phi(0.5) == 1.5 and phi(5.0) == 1.0
    s = phi + PLReparam.identity(0.0, 2.0)
    assert s(1.5) == pytest.approx(phi(1.5) + 1.5)
    with pytest.raises(ValueError):
        compose(PLReparam.identity(0.0, 0.5), build_field(16, "p"))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_random_reparam_bounds(seed):
    rng = np.random.default_rng(seed)
    phi = PLReparam.random(rng, -1.0, 2.0)
    assert phi.covers(-1.0, 2.0)
    assert phi.breakpoints.size <= ih.MAX_BREAKPOINTS
    assert phi.lipschitz <= ih.MAX_LIPSCHITZ + 1e-9


@pytest.mark.parametrize("seed", [0, 1])
def test_unit_lipschitz_composite_bound(seed):
    H = unit_lipschitz_field(seed, 2, 64)
    assert lipschitz_constant(H) == pytest.approx(1.0)
    phi = PLReparam.random(np.random.default_rng(seed), H.min_value, H.max_value)
    assert lipschitz_constant(compose(phi, H)) <= ih.MAX_LIPSCHITZ + 1e-9


def test_monotone_examples():
    A = generate_field(1, 2, 48)
    assert check_monotone(A, A.with_values(A.values + 0.1)).ok
    with pytest.raises(ValueError):
        check_monotone(A.with_values(A.values + 0.1), A)


def test_disk_vanishing_small():
    rep = check_disk_vanishing(0, 6, 64)
    assert rep.ok and rep.cases == 7


def test_symplectic_identity_and_translation():
    H = generate_field(6, 2, 64)
    maps = [LatticeSymplectomorphism(), LatticeSymplectomorphism(translation=(5, 9))]
    rep = check_symplectic_invariance(H, maps)
    assert rep.ok and rep.cases == 2


def test_default_maps_preserve_triangulation():
    maps = default_maps(128)
    assert len(maps) == 10
    assert all(m.preserves_triangulation for m in maps)
    assert not SHEAR.preserves_triangulation


def test_shear_held_to_approximate_tolerance():
    # the shear moves vertices but re-cuts the cells along the other diagonal,
    # so agreement is a discretization statement that tightens with n
    rep = check_symplectic_invariance(generate_field(7, 2, 128), [SHEAR])
    assert rep.ok


@pytest.mark.parametrize("slope", ih.ANNULUS_SLOPES)
def test_linear_annulus_measure(slope):
    n = 60
    A = LinearAnnulus(slope, 0.1, 0.25)
    W = A.region(n)
    assert W.measure == pytest.approx(0.25, abs=1e-12)
    assert tau(W) == pytest.approx(0.25, abs=1e-12)
    assert len(W.boundary) == 2


def test_annulus_battery_small():
    rep = check_annulus_values(slopes=((1, 0), (1, 1)), widths=(0.25,), n=64, pack_sizes=(3,))
    assert rep.ok


def test_refine_and_erode():
    n = 16
    m = disk_cells(n, (0.5, 0.5), 0.25)
    r = refine_cells(n, m)
    assert r.size == 4 * m.size and r.sum() == 4 * m.sum()
    e = erode_cells(n, m)
    assert not (e & ~m).any() and e.sum() < m.sum()
    assert from_cells(n, m).measure == pytest.approx(from_cells(2 * n, r).measure, abs=1e-15)


def test_tau_axioms_small():
    rep = check_tau_axioms(0, 4, 48)
    assert rep.ok
