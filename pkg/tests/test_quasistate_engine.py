import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusqs.quasistate_engine import (
    BCurve,
    CurveError,
    b_curve_reeb,
    b_curve_tau,
    evaluate_aarnes,
    quasi_state,
    reeb_decomposition,
    sample_levels,
    zeta,
)
from torusqs.torus_field import build_field, generate_field, integrate

COS = "cos(2*pi*q)+0.5*cos(2*pi*p)"
TOL = 5e-3


def bump(n, center=(0.4, 0.6), radius=0.2):
    i = np.arange(n) / n
    dp = (i[:, None] - center[0] + 0.5) % 1 - 0.5
    dq = (i[None, :] - center[1] + 0.5) % 1 - 0.5
    return np.maximum(0.0, 1.0 - np.hypot(dp, dq) / radius)


def test_sin_field_zero():
    rep = quasi_state(build_field(128, "sin(2*pi*q)"))
    assert abs(rep.zeta_reeb) <= 1e-9
    assert abs(rep.zeta_aarnes) <= TOL
    assert rep.tree_terms == [] or all(abs(t) <= 1e-9 for _, t, _ in rep.tree_terms)


def test_cos_field_zero_by_symmetry():
    rep = quasi_state(build_field(128, COS))
    assert abs(rep.zeta_reeb) <= 1e-9
    assert abs(rep.zeta_aarnes) <= TOL
    assert not rep.flagged


@pytest.mark.parametrize("c", [0.7, -2.25, 0.0])
def test_constant_field_exact(c):
    f = build_field(32, np.full((32, 32), c))
    assert zeta(f) == c
    rep = quasi_state(f)
    assert rep.zeta_reeb == c and rep.zeta_aarnes == c


def test_function_of_one_coordinate_is_its_mean():
    # every level set is a pair of essential circles, so zeta is the mean
    f = build_field(128, "sin(2*pi*q)**3 + 0.25*cos(4*pi*q)")
    assert zeta(f) == pytest.approx(integrate(f), abs=1e-9)


def test_disk_bump_vanishes():
    f = build_field(128, bump(128))
    assert abs(zeta(f)) <= 1e-9
    assert abs(quasi_state(f, "aarnes").zeta_aarnes) <= TOL


def test_dip_in_a_disk_is_invisible():
    # 1 - bump equals 1 off a disk, so its value is 1
    f = build_field(128, 1.0 - bump(128))
    assert zeta(f) == pytest.approx(1.0, abs=1e-9)


def test_b_curve_examples():
    f = build_field(128, COS)
    lo, hi = f.min_value, f.max_value
    ts = np.array([lo - 1.0, -0.99, np.nextafter(0.0, 1.0), 0.99, hi + 1.0])
    dec = reeb_decomposition(f)
    br = b_curve_reeb(f, ts, decomposition=dec).b
    bt = b_curve_tau(f, ts).b
    assert br[0] == 0.0 and bt[0] == 0.0
    assert br[-1] == pytest.approx(1.0, abs=1e-12) and bt[-1] == pytest.approx(1.0, abs=1e-12)
    # below the lower attachment level the sublevel set is a disk: no mass
    assert br[1] == 0.0 and bt[1] == 0.0
    # above the upper attachment level the complement is a disk: full mass
    assert br[3] == pytest.approx(1.0, abs=1e-12) and bt[3] == pytest.approx(1.0, abs=1e-12)
    # between the attachment levels: cycle part below t plus the lower tree
    lower = dec.trees[0].measure
    assert br[2] == pytest.approx(dec.sublevel_cycle_measure(ts[2]) + lower, abs=1e-12)
    assert abs(bt[2] - br[2]) <= TOL


def test_sin_b_curve_at_zero():
    f = build_field(128, "sin(2*pi*q)")
    t = np.array([np.nextafter(0.0, 1.0)])
    assert b_curve_tau(f, t).b[0] == pytest.approx(0.5, abs=2 / 128)
    assert b_curve_reeb(f, t).b[0] == pytest.approx(0.5, abs=2 / 128)


@given(seed=st.integers(0, 1000))
@settings(max_examples=6, deadline=None)
def test_curves_agree_and_are_monotone(seed):
    f = generate_field(seed, 2, 64)
    ts, _ = sample_levels(f, 4)
    br, bt = b_curve_reeb(f, ts).b, b_curve_tau(f, ts).b
    assert np.all(np.diff(bt) >= -1e-12) and np.all(np.diff(br) >= -1e-9)
    assert np.max(np.abs(br - bt)) <= TOL


def test_sample_levels_avoid_vertices_and_critical_values():
    f = generate_field(2, 2, 64)
    ts, crit = sample_levels(f, 8)
    assert not np.isin(ts, f.values).any()
    assert not np.isin(ts, crit).any()
    # every critical interval is sampled
    counts = np.histogram(ts, bins=crit)[0]
    assert np.all(counts >= 10)


def test_non_monotone_curve_rejected():
    curve = BCurve(np.array([0.1, 0.5, 0.9]), np.array([0.2, 0.1, 0.5]), np.array([0.0, 1.0]), 0.0, 1.0)
    with pytest.raises(CurveError):
        evaluate_aarnes(curve)


def test_aarnes_of_linear_curve():
    # b(t) = t on [0, 1] gives 1 - 1/2
    t = np.linspace(0.01, 0.99, 99)
    curve = BCurve(t, t.copy(), np.array([0.0, 1.0]), 0.0, 1.0)
    # flat ends contribute 0.01 * 0.01 + 0.99 * 0.01, the trapezoids (0.99**2 - 0.01**2) / 2
    assert evaluate_aarnes(curve) == pytest.approx(0.5, abs=1e-12)


def test_csv_format():
    f = generate_field(1, 1, 32)
    text = b_curve_tau(f, t_refine=2).to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,b"
    t0, b0 = map(float, lines[1].split(","))
    assert t0 > f.min_value and 0.0 <= b0 <= 1.0
    assert text.endswith("\n")


def test_report_json():
    rep = quasi_state(build_field(64, COS))
    data = json.loads(json.dumps(rep.to_json()))
    assert set(data) == {"zeta_reeb", "zeta_aarnes", "mean", "trees", "discrepancy", "n", "seed", "mode"}
    assert data["n"] == 64 and data["mode"] == "both"
    assert len(data["trees"]) == 2
    assert set(data["trees"][0]) == {"alpha", "term", "region_measure"}
    assert data["discrepancy"] == pytest.approx(abs(data["zeta_reeb"] - data["zeta_aarnes"]))


def test_single_path_modes():
    f = generate_field(3, 1, 48)
    r = quasi_state(f, "reeb")
    a = quasi_state(f, "aarnes")
    assert r.zeta_aarnes is None and a.zeta_reeb is None
    assert r.discrepancy is None and not r.flagged
    assert abs(r.zeta - a.zeta) <= TOL
    with pytest.raises(ValueError):
        quasi_state(f, "other")


def test_refinement_loop_converges():
    f = generate_field(5, 2, 64)
    rep = quasi_state(f, "both", refine_rtol=1e-6, max_rounds=3)
    assert rep.discrepancy <= TOL
