"""Seeded property batteries for the quasi-state and the topological measure.

Every ``check_*`` function returns a :class:`Report`; failing cases carry
their seed and inputs so they can be replayed one at a time.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .quasistate_engine import DEFAULT_TOL, b_curve_tau, evaluate_aarnes, zeta
from .reeb_graph import build_reeb
from .surface_topology import (
    SubSurface,
    TopologyError,
    cell_complement,
    cell_mask,
    cell_union,
    cells_disjoint,
    from_cells,
    normalize_cells,
    regularize,
    tau,
    vertex_stars,
)
from .torus_field import (
    ROTATION_6,
    FieldError,
    LatticeSymplectomorphism,
    TorusField,
    apply_map,
    build_field,
    generate_field,
    lipschitz_constant,
    torus_grid,
)

TAU_TOL = 1e-9
EXACT_TOL = 1e-12
INVARIANCE_TOL = 1e-9
MAX_BREAKPOINTS = 8
MAX_LIPSCHITZ = 10.0


@dataclass
class Report:
    battery: str
    cases: int = 0
    failures: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, seed, inputs, lhs, rhs, tol, holds: bool | None = None):
        """Count a case; keep it as a failure unless ``holds`` (default ``|lhs - rhs| <= tol``)."""
        self.cases += 1
        if holds is None:
            holds = abs(lhs - rhs) <= tol
        if not holds:
            self.failures.append(
                {"seed": seed, "inputs": inputs, "lhs": float(lhs), "rhs": float(rhs), "tol": tol}
            )
        return holds

    def merge(self, other: "Report") -> "Report":
        self.cases += other.cases
        self.failures.extend(other.failures)
        self.elapsed += other.elapsed
        return self

    def to_json(self) -> dict:
        return {
            "battery": self.battery,
            "cases": self.cases,
            "failures": self.failures,
            "elapsed": self.elapsed,
        }


class _timed:
    def __init__(self, report: Report):
        self.report = report

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self.report

    def __exit__(self, *exc):
        self.report.elapsed += time.perf_counter() - self.t0
        return False


def _zeta(field_: TorusField, path: str = "reeb") -> float:
    if path == "reeb":
        return zeta(field_)
    if path == "aarnes":
        return evaluate_aarnes(b_curve_tau(field_))
    raise ValueError(f"unknown evaluation path {path!r}")


# ---------------------------------------------------------------------------
# reparametrizations


@dataclass(frozen=True, eq=False)
class PLReparam:
    """Continuous piecewise-linear ``phi``; held constant beyond the end breakpoints."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or b.size < 2:
            raise ValueError("breakpoints and values must be matching 1-d arrays of length >= 2")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return np.interp(x, self.breakpoints, self.values)

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.breakpoints))))

    def covers(self, lo: float, hi: float) -> bool:
        return self.breakpoints[0] <= lo and hi <= self.breakpoints[-1]

    def __add__(self, other: "PLReparam") -> "PLReparam":
        b = np.union1d(self.breakpoints, other.breakpoints)
        return PLReparam(b, self(b) + other(b))

    def scaled(self, a: float) -> "PLReparam":
        return PLReparam(self.breakpoints, a * self.values)

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def identity(cls, lo: float, hi: float) -> "PLReparam":
        return cls(np.array([lo, hi]), np.array([lo, hi]))

    @classmethod
    def constant(cls, c: float, lo: float, hi: float) -> "PLReparam":
        return cls(np.array([lo, hi]), np.array([c, c]))

    @classmethod
    def random(cls, rng, lo: float, hi: float, max_breaks: int = MAX_BREAKPOINTS,
               lipschitz: float = MAX_LIPSCHITZ) -> "PLReparam":
        k = int(rng.integers(2, max_breaks + 1))
        inner = np.sort(rng.uniform(lo, hi, size=k - 2))
        b = np.unique(np.concatenate([[lo], inner, [hi]]))
        slopes = rng.uniform(-lipschitz, lipschitz, size=b.size - 1)
        v = np.concatenate([[rng.uniform(-1, 1)], np.cumsum(slopes * np.diff(b))])
        v[1:] += v[0]
        return cls(b, v)


def compose(phi: PLReparam, field_: TorusField) -> TorusField:
    """Vertex values ``phi(H(v))``; the PL interpolant of the composition."""
    if not phi.covers(field_.min_value, field_.max_value):
        raise ValueError("reparametrization does not cover the field's range")
    return field_.with_values(phi(field_.values))


def unit_lipschitz_field(seed: int, degree: int = 2, n: int = 128) -> TorusField:
    """Seeded trig field, centred and scaled to Lipschitz constant 1.

    A reparametrization with slopes up to ``MAX_LIPSCHITZ`` then yields a
    composite field whose Lipschitz constant is at most ``MAX_LIPSCHITZ``.
    """
    f = generate_field(seed, degree, n)
    lip = lipschitz_constant(f)
    if lip == 0:
        return f.with_values(np.zeros_like(f.values))
    return f.with_values((f.values - f.values.mean()) / lip)


# ---------------------------------------------------------------------------
# cell regions: annuli, disks, refinement, erosion


def _centroids(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Centroids of all triangles in grid units, ordered by triangle id."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel().astype(float), j.ravel().astype(float)
    ci = np.stack([i + 2 / 3, i + 1 / 3], axis=1).ravel()
    cj = np.stack([j + 1 / 3, j + 2 / 3], axis=1).ravel()
    return ci, cj


@dataclass(frozen=True)
class LinearAnnulus:
    """Triangles whose centroid has ``l p - k q`` mod 1 in ``[offset, offset + width)``.

    The boundary circles run along the slope ``(k, l)``.  When ``offset`` and
    ``width`` are multiples of ``1/n`` the region has measure ``width`` exactly.
    """

    slope: tuple[int, int]
    offset: float
    width: float

    def __post_init__(self):
        k, l = self.slope
        if math.gcd(int(k), int(l)) != 1:
            raise ValueError(f"slope {self.slope} is not a primitive vector")
        if not 0 < self.width < 1:
            raise ValueError("width must lie in (0, 1)")

    def cells(self, n: int) -> np.ndarray:
        k, l = self.slope
        ci, cj = _centroids(n)
        # centroid coordinates are multiples of 1/3; snap away float noise
        s = np.round(3 * (l * ci - k * cj)) / 3
        s = np.mod(s - self.offset * n, n)
        return s < self.width * n

    def region(self, n: int) -> SubSurface:
        return from_cells(n, self.cells(n))

    def translate(self, shift: float) -> "LinearAnnulus":
        return LinearAnnulus(self.slope, (self.offset + shift) % 1.0, self.width)


def disk_cells(n: int, center, radius: float) -> np.ndarray:
    """Triangles with centroid within ``radius`` of ``center`` (unit torus metric)."""
    ci, cj = _centroids(n)
    dp = (ci / n - center[0] + 0.5) % 1.0 - 0.5
    dq = (cj / n - center[1] + 0.5) % 1.0 - 0.5
    return normalize_cells(n, dp * dp + dq * dq <= radius * radius, "close")


def refine_cells(n: int, mask: np.ndarray) -> np.ndarray:
    """The same region on the ``2n`` grid: each triangle splits into four."""
    m = 2 * n
    mask = np.asarray(mask, dtype=bool).reshape(n, n, 2)
    out = np.zeros((m, m, 2), dtype=bool)
    t0, t1 = mask[:, :, 0], mask[:, :, 1]
    # lower triangles (i,j),(i+1,j),(i+1,j+1)
    out[0::2, 0::2, 0] |= t0
    out[1::2, 0::2, 0] |= t0
    out[1::2, 1::2, 0] |= t0
    out[1::2, 0::2, 1] |= t0
    # upper triangles (i,j),(i+1,j+1),(i,j+1)
    out[0::2, 0::2, 1] |= t1
    out[0::2, 1::2, 1] |= t1
    out[1::2, 1::2, 1] |= t1
    out[0::2, 1::2, 0] |= t1
    return out.ravel()


def erode_cells(n: int, mask: np.ndarray) -> np.ndarray:
    """Drop every triangle touching a boundary vertex, then open up pinches."""
    grid = torus_grid(n)
    mask = np.asarray(mask, dtype=bool)
    star = mask[vertex_stars(n)]
    boundary_vertex = star.any(axis=1) & ~star.all(axis=1)
    touch = boundary_vertex[grid.tri_vertices].any(axis=1)
    return normalize_cells(n, mask & ~touch, "open")


def random_disk(rng, n: int, max_measure: float = 0.3) -> np.ndarray:
    r_max = math.sqrt(max_measure / math.pi)
    return disk_cells(n, rng.uniform(0, 1, 2), rng.uniform(0.04, 0.9 * r_max))


ANNULUS_SLOPES = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1))


def random_annulus(rng, n: int) -> LinearAnnulus:
    slope = ANNULUS_SLOPES[rng.integers(len(ANNULUS_SLOPES))]
    width = int(rng.integers(max(2, n // 32), n // 2)) / n
    offset = int(rng.integers(n)) / n
    return LinearAnnulus(slope, offset, width)


def random_subsurface(rng, n: int) -> tuple[str, np.ndarray]:
    """Draw from disks, annuli, their complements and disjoint unions."""
    kind = ("disk", "annulus", "disk-complement", "annulus-complement",
            "two-disks", "annulus+disk")[rng.integers(6)]
    if kind == "disk":
        return kind, random_disk(rng, n)
    if kind == "annulus":
        return kind, random_annulus(rng, n).cells(n)
    if kind == "disk-complement":
        return kind, ~random_disk(rng, n)
    if kind == "annulus-complement":
        return kind, ~random_annulus(rng, n).cells(n)
    first = random_disk(rng, n) if kind == "two-disks" else random_annulus(rng, n).cells(n)
    return kind, first | disjoint_disk(rng, n, first)


def disjoint_disk(rng, n: int, mask: np.ndarray, tries: int = 50) -> np.ndarray:
    """A random disk sharing no vertex with ``mask`` (empty if none found)."""
    A = from_cells(n, mask)
    for _ in range(tries):
        d = random_disk(rng, n, 0.1)
        if d.any() and cells_disjoint(A, from_cells(n, d)):
            return d
    return np.zeros_like(mask)


# ---------------------------------------------------------------------------
# quasi-state batteries


def check_normalization(n: int = 128) -> Report:
    rep = Report("normalization")
    with _timed(rep):
        one = build_field(n, np.ones((n, n)))
        rep.record(None, {"n": n}, _zeta(one), 1.0, 0.0)
    return rep


def check_quasilinearity(field_: TorusField, phi: PLReparam, psi: PLReparam,
                         tol: float = DEFAULT_TOL, scalars=(2.0, -1.0, 0.5),
                         seed=None, path: str = "reeb") -> Report:
    """``zeta(phi o H) + zeta(psi o H) = zeta((phi + psi) o H)`` and homogeneity."""
    rep = Report("quasilinearity")
    with _timed(rep):
        z_phi = _zeta(compose(phi, field_), path)
        z_psi = _zeta(compose(psi, field_), path)
        z_sum = _zeta(compose(phi + psi, field_), path)
        inputs = {"phi": phi.to_json(), "psi": psi.to_json()}
        rep.record(seed, {**inputs, "law": "additivity"}, z_phi + z_psi, z_sum, tol)
        for a in scalars:
            z_a = _zeta(compose(phi.scaled(a), field_), path)
            rep.record(seed, {**inputs, "law": "homogeneity", "a": a}, z_a, a * z_phi, tol)
    return rep


def quasilinearity_battery(seed: int = 0, count: int = 200, n: int = 128,
                           tol: float = DEFAULT_TOL) -> Report:
    rep = Report("quasilinearity")
    for s in range(seed, seed + count):
        H = unit_lipschitz_field(s, 2, n)
        rng = np.random.default_rng(s)
        phi = PLReparam.random(rng, H.min_value, H.max_value)
        psi = PLReparam.random(rng, H.min_value, H.max_value)
        rep.merge(check_quasilinearity(H, phi, psi, tol, scalars=(rng.uniform(-3, 3),), seed=s))
    return rep


def check_monotone(field_a: TorusField, field_b: TorusField, tol: float = DEFAULT_TOL,
                   seed=None, label: str = "") -> Report:
    if np.any(field_a.values > field_b.values):
        raise ValueError("check_monotone needs A <= B at every vertex")
    rep = Report("monotone")
    with _timed(rep):
        za, zb = _zeta(field_a), _zeta(field_b)
        rep.record(seed, {"pair": label}, za, zb, tol, holds=za <= zb + tol)
    return rep


def monotone_battery(seed: int = 0, count: int = 200, n: int = 128,
                     tol: float = DEFAULT_TOL) -> Report:
    """Alternates ``(A, A + |noise|)`` and ``(min(F, G), F)``; adds positivity cases."""
    rep = Report("monotone")
    for s in range(seed, seed + count):
        rng = np.random.default_rng(s)
        F = generate_field(s, 2, n)
        if s % 2 == 0:
            noise = np.abs(generate_field(s + 7919, int(rng.integers(1, 3)), n).values)
            B = F.with_values(F.values + rng.uniform(0.05, 1.0) * noise)
            rep.merge(check_monotone(F, B, tol, s, "A, A + |noise|"))
        else:
            G = generate_field(s + 7919, 2, n)
            A = F.with_values(np.minimum(F.values, G.values))
            rep.merge(check_monotone(A, F, tol, s, "min(F, G), F"))
        pos = F.with_values(np.abs(F.values))
        with _timed(rep):
            z = _zeta(pos)
            rep.record(s, {"positivity": "|F|"}, z, 0.0, tol, holds=z >= -tol)
    return rep


def check_disk_vanishing(seed: int = 0, count: int = 100, n: int = 128,
                         tol: float = DEFAULT_TOL, max_measure: float = 0.3) -> Report:
    """Positive, negative and mixed-sign bumps supported in disks."""
    rep = Report("disk_vanishing")
    with _timed(rep):
        zero = build_field(n, np.zeros((n, n)))
        rep.record(None, {"kind": "zero"}, _zeta(zero), 0.0, 0.0)
        p = np.arange(n)[:, None] / n
        q = np.arange(n)[None, :] / n
        r_max = math.sqrt(max_measure / math.pi)
        for s in range(seed, seed + count):
            rng = np.random.default_rng(s)
            c = rng.uniform(0, 1, 2)
            r = rng.uniform(0.05, r_max)
            amp = rng.uniform(0.5, 5.0)
            kind = ("positive", "negative", "mixed")[s % 3]
            dp = (p - c[0] + 0.5) % 1.0 - 0.5
            dq = (q - c[1] + 0.5) % 1.0 - 0.5
            d = np.sqrt(dp * dp + dq * dq) / r
            bump = np.where(d < 1, (1 - d * d) ** 2, 0.0)
            if kind == "negative":
                bump = -bump
            elif kind == "mixed":
                bump = bump * np.cos(3 * math.pi * d / 2 + rng.uniform(0, math.pi))
            H = build_field(n, amp * bump)
            inputs = {"kind": kind, "center": c.tolist(), "radius": r, "amplitude": amp}
            rep.record(s, inputs, _zeta(H), 0.0, tol)
    return rep


def _matmul(a, b):
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(2)) for j in range(2)) for i in range(2)
    )


def default_maps(n: int) -> list[LatticeSymplectomorphism]:
    """Ten triangulation-preserving lattice maps: rotations, translations, mixtures."""
    rots = [((1, 0), (0, 1))]
    for _ in range(5):
        rots.append(_matmul(ROTATION_6, rots[-1]))
    maps = [LatticeSymplectomorphism(m) for m in rots[1:]]
    maps += [
        LatticeSymplectomorphism(translation=(n // 2, round(n / 3))),
        LatticeSymplectomorphism(translation=(1, 0)),
        LatticeSymplectomorphism(translation=(17 % n, 5 % n)),
        LatticeSymplectomorphism(rots[2], (3, n - 7)),
        LatticeSymplectomorphism(rots[3], (n // 4, 1)),
    ]
    return maps


SHEAR = LatticeSymplectomorphism(((1, 1), (0, 1)))


def check_symplectic_invariance(field_: TorusField, maps, seed=None,
                                tol: float = INVARIANCE_TOL,
                                approx_tol: float = DEFAULT_TOL) -> Report:
    """Triangulation-preserving maps permute triangles, so agreement is to round-off;
    other lattice maps only permute vertices and are held to ``approx_tol``."""
    rep = Report("symplectic")
    with _timed(rep):
        z0 = _zeta(field_)
        for phi in maps:
            t = tol if phi.preserves_triangulation else approx_tol
            z = _zeta(apply_map(field_, phi))
            inputs = {"matrix": [list(r) for r in phi.matrix], "translation": list(phi.translation)}
            rep.record(seed, inputs, z, z0, t)
    return rep


def symplectic_battery(seed: int = 0, count: int = 20, n: int = 128,
                       tol: float = INVARIANCE_TOL) -> Report:
    rep = Report("symplectic")
    maps = default_maps(n)
    for s in range(seed, seed + count):
        rep.merge(check_symplectic_invariance(generate_field(s, 2, n), maps, s, tol))
    return rep


def betti_battery(seed: int = 0, count: int = 50, n: int = 128, degree: int = 2) -> Report:
    """Every generated field must have a Reeb graph with exactly one cycle."""
    rep = Report("betti")
    with _timed(rep):
        for s in range(seed, seed + count):
            try:
                b = build_reeb(generate_field(s, degree, n)).betti
            except TopologyError as exc:
                b = -1
                rep.failures.append({"seed": s, "inputs": {"error": str(exc)},
                                     "lhs": -1.0, "rhs": 1.0, "tol": 0.0})
                rep.cases += 1
                continue
            rep.record(s, {"n": n, "degree": degree}, b, 1, 0)
    return rep


# ---------------------------------------------------------------------------
# topological-measure batteries


def _region_mask(W: SubSurface) -> np.ndarray:
    return cell_mask(W)


def check_tau_axioms(seed: int = 0, count: int = 200, n: int = 128,
                     tol: float = TAU_TOL) -> Report:
    """Complement, additivity, monotonicity, idempotence and inner regularity."""
    rep = Report("tau_axioms")
    with _timed(rep):
        for s in range(seed, seed + count):
            rng = np.random.default_rng(s)
            kind, mask = random_subsurface(rng, n)
            W = from_cells(n, mask, normalize="close")
            mask = cell_mask(W)
            tw = tau(W)
            info = {"kind": kind, "triangles": int(mask.sum())}

            rep.record(s, {**info, "axiom": "complement"}, tw + tau(cell_complement(W)), 1.0, tol)

            d = disjoint_disk(rng, n, mask)
            if d.any():
                D = from_cells(n, d)
                U = from_cells(n, mask | d)
                rep.record(s, {**info, "axiom": "additivity"}, tau(U), tw + tau(D), tol)

            bigger = from_cells(n, mask | random_disk(rng, n), normalize="close")
            tb = tau(bigger)
            rep.record(s, {**info, "axiom": "monotonicity"}, tw, tb, tol, holds=tw <= tb + tol)

            R = regularize(W).region
            R2 = regularize(from_cells(n, cell_mask(R))).region
            diff = int(np.count_nonzero(cell_mask(R) != cell_mask(R2)))
            rep.record(s, {**info, "axiom": "idempotence"}, diff, 0, 0)

            # inner regularity: closed regions inside the interior, shrinking collars
            k0 = from_cells(n, erode_cells(n, mask))
            fine = refine_cells(n, mask)
            k1 = from_cells(2 * n, erode_cells(2 * n, fine))
            t0, t1 = tau(k0), tau(k1)
            collar = W.measure - k1.measure
            holds = t0 <= t1 + tol and t1 <= tw + tol and tw - t1 <= collar + tol
            rep.record(s, {**info, "axiom": "inner regularity", "collar": collar}, t1, tw,
                       tol, holds=holds)
    return rep


def check_annulus_values(slopes=ANNULUS_SLOPES, widths=(1 / 8, 1 / 4, 1 / 2, 3 / 4),
                         n: int = 128, pack_sizes=(3, 4, 8), pack_n: int = 120,
                         pack_gap: int = 2,
                         tol: float = EXACT_TOL) -> Report:
    """Grid-aligned linear annuli have ``tau = width``; packings obey ``(k - 1) tau <= 1``."""
    rep = Report("annulus")
    with _timed(rep):
        for slope in slopes:
            for w in widths:
                A = LinearAnnulus(slope, 0.0, w)
                rep.record(None, {"slope": list(slope), "width": w, "n": n},
                           tau(A.region(n)), w, tol)
        for slope in slopes:
            for k in pack_sizes:
                m = pack_n // k  # rows per strip; strips separated by pack_gap rows
                if pack_n % k or (k - 1) * (m + pack_gap) > pack_n:
                    raise ValueError(f"cannot pack {k - 1} strips of width 1/{k} at n={pack_n}")
                strips = [LinearAnnulus(slope, (i * (m + pack_gap)) / pack_n, m / pack_n)
                          for i in range(k - 1)]
                regions = [S.region(pack_n) for S in strips]
                info = {"slope": list(slope), "n_pack": k, "n": pack_n}
                disjoint = all(cells_disjoint(regions[i], regions[j])
                               for i in range(len(regions)) for j in range(i))
                taus = [tau(R) for R in regions]
                union = tau(cell_union(*regions))
                rep.record(None, {**info, "check": "disjoint translates"}, float(disjoint), 1.0, 0)
                rep.record(None, {**info, "check": "translate value"}, max(taus), 1 / k, tol,
                           holds=max(abs(t - 1 / k) for t in taus) <= tol)
                rep.record(None, {**info, "check": "additivity"}, union, sum(taus), tol)
                rep.record(None, {**info, "check": "(n-1) tau <= 1"}, (k - 1) * taus[0], 1.0,
                           tol, holds=(k - 1) * taus[0] <= 1 + tol)
    return rep
