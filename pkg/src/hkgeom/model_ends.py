"""Model ends of gravitational instantons and a dispatcher from measured asymptotics to families.

Builders return sampled geometry (a Gibbons–Hawking geometry, a flat
semi-flat torus bundle over a cone, or a flat product) plus the expected
asymptotic data. ``classify_end`` consumes measurements only, so it can be
pointed at any geometry whose volume growth and monodromy were measured.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import gibbons_hawking as gh
from . import monodromy as mono
from .discrete_calculus import FormField, GridChart, MetricField, riemann_curvature
from .special_kahler import ADMISSIBLE_BETA
from .triple_algebra import DefiniteTriple, hk_residual

FAMILIES = ("ALE", "ALF_A", "ALF_D", "ALG", "ALGstar_I", "ALGstar_Istar", "ALH", "ALHstar")
FAMILY_KAPPA = {"ALE": 4.0, "ALF_A": 3.0, "ALF_D": 3.0, "ALG": 2.0, "ALGstar_I": 2.0, "ALGstar_Istar": 2.0,
                "ALHstar": 4 / 3, "ALH": 1.0}
# asymptotic cone dimension -> volume exponents it allows
DIMENSION_ROWS = {4: (4.0,), 3: (3.0,), 2: (2.0,), 1: (1.0, 4 / 3)}
FIBER_AREA = 2 * math.pi
KAPPA_TOL = 0.15
FIBER_ALIASES = {"nilpotent": "nilpotent", "heisenberg": "nilpotent", "nil": "nilpotent",
                 "abelian": "abelian", "torus": "abelian", "t3": "abelian"}


class InadmissibleAngle(ValueError):
    pass


class InadmissibleParameter(ValueError):
    pass


class AmbiguousDimension(ValueError):
    pass


class InsufficientRange(ValueError):
    pass


@dataclass(frozen=True)
class Expected:
    kappa: float
    cone: str
    monodromy: str | None = None
    fiber: str | None = None


@dataclass(frozen=True)
class Measurement:
    kappa: float
    kappa_err: float
    cone: str | None = None
    monodromy: object = None
    fiber: str | None = None


@dataclass
class FlatEnd:
    """Flat hyperkähler data (metric, triple) on a sampled chart."""

    metric: MetricField
    triple: DefiniteTriple


@dataclass
class ModelEnd:
    family: str
    params: dict
    geometry: object
    expected: Expected
    resolution: int
    quotient: str | None = None
    cover: "ModelEnd | None" = field(default=None, repr=False)

    @property
    def label(self) -> str:
        if self.family == "ALG":
            return f"ALG({self.params['beta']})"
        return self.family

    def hk_residual(self) -> float:
        return hk_residual(self.geometry.triple)

    def volume_profile(self, radii=None) -> tuple[np.ndarray, np.ndarray]:
        return _VOLUMES[self.family](self, radii)

    def measure(self, radii=None, kappa_err: float = 0.1) -> Measurement:
        r, v = self.volume_profile(radii)
        kappa = gh.fit_exponent(r, v)
        mono_matrix = _monodromy_matrix(self)
        return Measurement(kappa, kappa_err, self.expected.cone, mono_matrix, self.expected.fiber)


# ----------------------------------------------------------------- builders

def _int_param(params, key, lo, what):
    val = params.get(key)
    if val is None or int(val) != val or int(val) < lo:
        raise InadmissibleParameter(f"{what} needs an integer {key} >= {lo}, got {val!r}")
    return int(val)


def _gh_box(half: float, n: int) -> GridChart:
    return GridChart.box((-half,) * 3, (half,) * 3, (n,) * 3)


def _check_chart(n: int) -> GridChart:
    # small chart off the singular set for the exactness checks
    return GridChart.box((0.6, 0.4, 0.5), (2.6, 2.4, 2.5), (n, n, n))


def build_end(family: str, params: dict | None = None, resolution: int = 16) -> ModelEnd:
    """Sampled model end of ``family``; ``resolution`` is the cell count per base axis of the check chart."""
    params = dict(params or {})
    n = int(resolution)
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if family == "ALE":
        order = _int_param(params, "order", 1, "ALE")
        geo = gh.geometry("multi_center", {"weights": [order], "constant": 0.0}, _check_chart(n))
        return ModelEnd(family, {"order": order}, geo, Expected(4.0, f"R4/Z{order}"), n)
    if family == "ALF_A":
        k = _int_param(params, "k", 0, "ALF_A")
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise InadmissibleParameter("ALF_A needs c > 0")
        geo = gh.geometry("multi_center", {"weights": [k + 1], "constant": c}, _check_chart(n))
        return ModelEnd(family, {"k": k, "c": c}, geo, Expected(3.0, "R3"), n)
    if family == "ALF_D":
        # the cover ALF-A_{2k-5} has potential (2k-4)/(2r) + c; k >= 3 keeps it positive everywhere
        k = _int_param(params, "k", 2, "ALF_D")
        c = float(params.get("c", 1.0))
        if k == 2:
            # zero mass: the cover is flat R3 x S1
            geo = gh.geometry("constant", {"c": c}, _check_chart(n))
            cover = ModelEnd("ALF_A", {"k": -1, "c": c}, geo, Expected(3.0, "R3"), n)
        else:
            cover = build_end("ALF_A", {"k": 2 * k - 5, "c": c}, n)
        return ModelEnd(family, {"k": k, "c": c}, cover.geometry, Expected(3.0, "R3/Z2"), n,
                        quotient="Z2: x -> -x on R3", cover=cover)
    if family == "ALG":
        beta = _parse_beta(params.get("beta"))
        return ModelEnd(family, {"beta": beta}, _flat_alg(beta, n), Expected(2.0, f"C_{beta}", f"R~_{beta}"), n)
    if family == "ALGstar_I":
        k = _int_param(params, "k", 1, "ALGstar_I")
        chart = GridChart.box((1.6, -1.0, -1.0), (3.6, 1.0, 1.0), (n, n, n))
        geo = gh.geometry("log_radial", {"k": k}, chart)
        return ModelEnd(family, {"k": k}, geo, Expected(2.0, "R2", f"I_{k}"), n)
    if family == "ALGstar_Istar":
        k = _int_param(params, "k", 1, "ALGstar_Istar")
        cover = build_end("ALGstar_I", {"k": 2 * k}, n)
        return ModelEnd(family, {"k": k}, cover.geometry, Expected(2.0, "R2/Z2", f"I_{k}*"), n,
                        quotient="Z2: x -> -x on R2, rotation by pi on S1", cover=cover)
    if family == "ALH":
        lengths = tuple(float(x) for x in params.get("lengths", (2 * math.pi,) * 3))
        angles = tuple(float(x) for x in params.get("angles", (math.pi / 2,) * 3))
        lattice = torus_lattice(lengths, angles)
        return ModelEnd(family, {"lengths": lengths, "angles": angles, "lattice": lattice},
                        _flat_product(lattice, n), Expected(1.0, "R+", None, "abelian"), n)
    # ALHstar
    b = _int_param(params, "b", 1, "ALHstar")
    side = math.sqrt(FIBER_AREA)
    # the gauge b x dy is not periodic in x, so the exactness check runs on an open patch of the torus
    chart = GridChart.box((0.0, 0.0, 1.0), (side, side, 3.0), (n, n, n), (False, True, False))
    geo = gh.geometry("linear", {"b": b}, chart)
    return ModelEnd(family, {"b": b}, geo, Expected(4 / 3, "R+", None, "nilpotent"), n)


def _parse_beta(beta) -> Fraction:
    if beta is None:
        raise InadmissibleAngle("ALG needs beta")
    try:
        b = Fraction(str(beta)).limit_denominator(12)
    except (ValueError, ZeroDivisionError) as exc:
        raise InadmissibleAngle(f"cannot read beta = {beta!r}") from exc
    if b not in ADMISSIBLE_BETA or abs(float(b) - float(Fraction(str(beta)))) > 1e-12:
        raise InadmissibleAngle(f"beta = {beta} is not one of {[str(x) for x in ADMISSIBLE_BETA]}")
    return b


def fiber_lattice(beta: Fraction) -> np.ndarray:
    """Columns span a lattice of covolume 2 pi invariant under rotation by 2 pi beta."""
    if Fraction(beta).denominator in (3, 6):
        basis = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
    else:
        basis = np.eye(2)
    return basis * math.sqrt(FIBER_AREA / abs(np.linalg.det(basis)))


def lattice_monodromy(beta: Fraction) -> mono.SL2:
    """Rotation by 2 pi beta written in the fiber lattice basis."""
    L = fiber_lattice(beta)
    M = np.linalg.solve(L, mono.rotation(float(beta)) @ L)
    Mi = np.rint(M)
    if np.max(np.abs(M - Mi)) > 1e-9:
        raise AssertionError(f"lattice for beta = {beta} is not rotation invariant")
    return mono.SL2(*(int(x) for x in Mi.ravel()))


def _flat_alg(beta: Fraction, n: int) -> FlatEnd:
    """Semi-flat metric d rho^2 + rho^2 d theta^2 + |L (du, dv)|^2 on rho in [1, 3], theta in [0, 2 pi beta)."""
    L = fiber_lattice(beta)
    chart = GridChart.box((1.0, 0.0, 0.0, 0.0), (3.0, 2 * math.pi * float(beta), 1.0, 1.0), (n, n, 4, 4),
                          (False, False, True, True))
    rho = chart.axis(0)[:, None, None, None]
    theta = chart.axis(1)[None, :, None, None]
    G = L.T @ L
    metric = MetricField(chart, {(0, 0): 1.0, (1, 1): rho ** 2, (2, 2): G[0, 0], (2, 3): G[0, 1], (3, 3): G[1, 1]})
    # frame e0 = d rho, e1 = rho d theta, (e2, e3) = L (du, dv); omega2 + i omega3 = e^{i theta}(e0 + i e1)^(e2 + i e3)
    det = float(np.linalg.det(L))
    e0e2 = {(0, 2): L[0, 0], (0, 3): L[0, 1]}
    e0e3 = {(0, 2): L[1, 0], (0, 3): L[1, 1]}
    e1e2 = {(1, 2): rho * L[0, 0], (1, 3): rho * L[0, 1]}
    e1e3 = {(1, 2): rho * L[1, 0], (1, 3): rho * L[1, 1]}
    c, s = np.cos(theta), np.sin(theta)

    def combine(*terms):
        out = {}
        for coef, comps in terms:
            for k, v in comps.items():
                out[k] = out.get(k, 0.0) + coef * v
        return out

    re = combine((c, e0e2), (-c, e1e3), (-s, e0e3), (-s, e1e2))
    im = combine((s, e0e2), (-s, e1e3), (c, e0e3), (c, e1e2))
    w1 = {(0, 1): rho, (2, 3): det}
    triple = DefiniteTriple(chart, tuple(FormField(chart, 2, {k: np.broadcast_to(v, chart.extents) if np.ndim(v)
                                                                 else v for k, v in w.items()})
                                         for w in (w1, re, im)))
    return FlatEnd(metric, triple)


def torus_lattice(lengths, angles) -> np.ndarray:
    """Lower-triangular basis (rows) of a 3-torus with edge lengths and angles (23, 13, 12)."""
    a, b, c = lengths
    al, be, ga = angles
    if min(lengths) <= 0 or not all(0 < x < math.pi for x in angles):
        raise InadmissibleParameter("torus lengths must be positive and angles in (0, pi)")
    G = np.array([[a * a, a * b * math.cos(ga), a * c * math.cos(be)],
                  [a * b * math.cos(ga), b * b, b * c * math.cos(al)],
                  [a * c * math.cos(be), b * c * math.cos(al), c * c]])
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise InadmissibleParameter("torus angles do not define a lattice") from exc


def _flat_product(lattice: np.ndarray, n: int) -> FlatEnd:
    """ds^2 + |lattice^T dx|^2 on [0, 2] x T^3 with unit-periodic torus coordinates."""
    chart = GridChart.box((0.0, 0.0, 0.0, 0.0), (2.0, 1.0, 1.0, 1.0), (n, 4, 4, 4), (False, True, True, True))
    G = lattice @ lattice.T
    g = {(0, 0): 1.0}
    for i in range(3):
        for j in range(i, 3):
            g[(i + 1, j + 1)] = G[i, j]
    # orthonormal frame e0 = ds, (e1, e2, e3) = lattice^T dx
    P = np.zeros((4, 4))
    P[0, 0] = 1.0
    P[1:, 1:] = lattice.T
    forms = []
    for (a, b), (c, d) in (((0, 1), (2, 3)), ((0, 2), (3, 1)), ((0, 3), (1, 2))):
        comp = {}
        for (x, y) in ((a, b), (c, d)):
            for i in range(4):
                for j in range(i + 1, 4):
                    val = P[x, i] * P[y, j] - P[x, j] * P[y, i]
                    if val:
                        comp[(i, j)] = comp.get((i, j), 0.0) + val
        forms.append(FormField(chart, 2, comp))
    return FlatEnd(MetricField(chart, g), DefiniteTriple(chart, tuple(forms)))


def flatness(end: ModelEnd, order: int = 6) -> float:
    """max |Rm|^2 over interior samples of a flat end's sampled metric."""
    if not isinstance(end.geometry, FlatEnd):
        raise TypeError("flatness applies to the flat ALG and ALH ends")
    curv = riemann_curvature(end.geometry.metric, order)
    layer = order // 2 + 1
    arr = np.broadcast_to(curv.norm_sq, end.geometry.metric.chart.extents)
    sl = tuple(slice(layer, -layer) if not p else slice(None) for p in end.geometry.metric.chart.periodic)
    return float(np.max(np.abs(arr[sl])))


# ------------------------------------------------------------ volume growth

def _radii(default, radii):
    return np.asarray(default if radii is None else radii, float)


# mean of 1/|x| over the unit cube centred at the origin
CUBE_MEAN_INVERSE_RADIUS = 2.3800772
# fit window for single-center potentials c + a/r, in units of the length a/c where mass and constant balance
MASS_WINDOW = (40.0, 400.0)


def radial_distance(r, a: float, c: float):
    """Distance to the center in the metric (c + a/r)|dx|^2: the integral of sqrt(c + a/rho) from 0 to r."""
    r = np.asarray(r, float)
    if a == 0:
        return math.sqrt(c) * r
    if c == 0:
        return 2 * np.sqrt(a * r)
    return np.sqrt(r * (c * r + a)) + a / math.sqrt(c) * np.arcsinh(np.sqrt(c * r / a))


def _gh_volumes(end: ModelEnd, radii, cells=121):
    """Ball volumes about the center for single-center potentials on R^3 (ALE, ALF).

    Radial segments minimize length for a radial conformal factor, so the
    distance is ``radial_distance``; the volume is a sum over grid cells.
    ``cells`` is odd so a sample sits on the center, where V takes its cell mean.
    """
    src = _source_for(end)
    mass = 0.0 if src.kind == "constant" else float(np.sum(src.params["weights"]))
    const = float(src.params.get("constant", src.params.get("c", 0.0)))
    a = 0.5 * mass
    if radii is None:
        scale = a / const if a > 0 and const > 0 else 1.0
        lo, hi = MASS_WINDOW if a > 0 and const > 0 else (3.0, 30.0)
        radii = radial_distance(scale * np.geomspace(lo, hi, 5), a, const)
    radii = np.asarray(radii, float)
    half = 1.05 * _radius_at_distance(float(radii.max()), a, const)
    chart = _gh_box(half, cells)
    x, y, z = chart.coordinates()
    r3 = np.sqrt(x * x + y * y + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        V = np.array(np.broadcast_to(src.evaluate(x, y, z)[0], chart.extents))
    V[np.broadcast_to(r3 < 0.5 * chart.spacing[0], chart.extents)] = a * CUBE_MEAN_INVERSE_RADIUS / chart.spacing[0] + const
    dens = V * src.default_circle_length() * chart.cell_volume()
    dist = np.broadcast_to(radial_distance(r3, a, const), chart.extents)
    if end.family == "ALF_D":
        # fundamental domain of x -> -x: z > 0, with the z = 0 samples shared between the two halves
        dens = dens * np.broadcast_to(np.where(np.abs(z) < 0.5 * chart.spacing[2], 0.5, np.where(z > 0, 1.0, 0.0)), chart.extents)
    return radii, np.array([float(np.sum(dens[dist <= r])) for r in radii])


def _radius_at_distance(s: float, a: float, c: float) -> float:
    hi = s / math.sqrt(c) if c > 0 else s * s / (4 * a)
    return float(brentq(lambda r: float(radial_distance(r, a, c)) - s, 0.0, hi + 1.0))


def _source_for(end: ModelEnd) -> gh.Source:
    if end.family == "ALE":
        return gh.Source("multi_center", {"weights": [end.params["order"]], "constant": 0.0})
    base = end.cover if end.family == "ALF_D" else end
    if base.params["k"] < 0:
        return gh.Source("constant", {"c": base.params["c"]})
    return gh.Source("multi_center", {"weights": [base.params["k"] + 1], "constant": base.params["c"]})


def _alg_volumes(end: ModelEnd, radii, cells=400):
    """Balls about the vertex of C_beta times the fiber torus (fiber diameter neglected)."""
    beta = float(end.params["beta"])
    radii = _radii(np.geomspace(2, 40, 6), radii)
    edges = np.linspace(0, radii.max(), cells * 4 + 1)
    rho = 0.5 * (edges[1:] + edges[:-1])
    ring = 2 * math.pi * beta * rho * np.diff(edges) * FIBER_AREA
    return radii, np.array([float(np.sum(ring[rho <= r])) for r in radii])


def _algstar_volumes(end: ModelEnd, radii, half=60.0, cells=120):
    k = end.params["k"] if end.family == "ALGstar_I" else 2 * end.params["k"]
    chart = GridChart.box((-half, -half, 0.0), (half, half, 2 * math.pi), (cells, cells, 6), (False, False, True))
    x, y, _ = chart.coordinates()
    r = np.sqrt(x * x + y * y)
    # inside the compact set K = {r <= e} the model is not defined; use the boundary value there
    V = k * np.log(np.maximum(r, math.e)) + 0 * chart.coordinates()[2]
    radii = _radii(math.sqrt(k / 2) * np.geomspace(30, 130, 5), radii)
    vols, dist = gh.ball_volumes(chart, V, 2 * math.pi, (0.0, 0.0, 0.0), radii)
    if end.family == "ALGstar_Istar":
        dens = V * 2 * math.pi * chart.cell_volume()
        vols = np.array([float(np.sum(dens[(dist <= rr) & (x > 0)])) for rr in radii])
    return radii, vols


def _alh_volumes(end: ModelEnd, radii, cells=24, s_cells=400):
    lattice = end.params["lattice"]
    diam = float(np.sum(np.linalg.norm(lattice, axis=1)))
    radii = _radii(np.geomspace(3 * diam, 30 * diam, 5), radii)
    u = (np.arange(cells) + 0.5) / cells
    U = np.stack(np.meshgrid(u, u, u, indexing="ij"), -1).reshape(-1, 3)
    # torus distance to the base point at u = 0: minimum over neighbouring lattice translates
    shifts = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij")).reshape(3, -1).T
    d_t = np.min(np.linalg.norm((U[:, None, :] + shifts[None]) @ lattice, axis=-1), axis=1)
    s_edges = np.linspace(0, radii.max(), s_cells + 1)
    s = 0.5 * (s_edges[1:] + s_edges[:-1])
    cell = abs(np.linalg.det(lattice)) / cells ** 3 * np.diff(s_edges)[0]
    dist = np.sqrt(d_t[:, None] ** 2 + s[None, :] ** 2)
    return radii, np.array([float(np.sum(dist <= r)) * cell for r in radii])


def _alhstar_volumes(end: ModelEnd, radii):
    side = math.sqrt(FIBER_AREA)
    chart = GridChart.box((0, 0, 0.05), (side, side, 20.05), (12, 12, 200), (True, True, False))
    z = chart.coordinates()[2]
    radii = _radii(np.geomspace(5, 50, 6), radii)
    V = end.params["b"] * np.broadcast_to(z, chart.extents)
    vols, _ = gh.ball_volumes(chart, V, 2 * math.pi, (side / 2, side / 2, 0.05), radii, allow_faces={(2, 0)})
    return radii, vols


_VOLUMES = {"ALE": _gh_volumes, "ALF_A": _gh_volumes, "ALF_D": _gh_volumes, "ALG": _alg_volumes,
            "ALGstar_I": _algstar_volumes, "ALGstar_Istar": _algstar_volumes, "ALH": _alh_volumes,
            "ALHstar": _alhstar_volumes}


def _monodromy_matrix(end: ModelEnd):
    if end.family == "ALG":
        return lattice_monodromy(end.params["beta"])
    if end.family == "ALGstar_I":
        return mono.I(end.params["k"])
    if end.family == "ALGstar_Istar":
        return mono.I_star(end.params["k"])
    return None


# ----------------------------------------------------------- classification

def cone_dimension(kappa: float, err: float) -> int:
    """Row of the volume-growth table hit by the interval kappa +- err."""
    rows = [d for d, ks in DIMENSION_ROWS.items() if any(abs(kappa - k) <= err for k in ks)]
    if len(rows) != 1:
        raise AmbiguousDimension(
            f"kappa = {kappa:.3f} +- {err:.3f} matches {'no' if not rows else len(rows)} rows of the table")
    return rows[0]


def classify_end(m: Measurement) -> frozenset:
    """Candidate families for measured asymptotics (volume exponent, cone, monodromy, fiber type)."""
    d = cone_dimension(m.kappa, m.kappa_err)
    if d == 4:
        return frozenset({"ALE"})
    if d == 3:
        if m.cone is None:
            return frozenset({"ALF_A", "ALF_D"})
        return frozenset({"ALF_D"} if "Z2" in m.cone else {"ALF_A"})
    if d == 1:
        fiber = FIBER_ALIASES.get((m.fiber or "").lower())
        if fiber == "nilpotent":
            return frozenset({"ALHstar"})
        if fiber == "abelian":
            return frozenset({"ALH"})
        return frozenset(f for f, k in (("ALH", 1.0), ("ALHstar", 4 / 3)) if abs(m.kappa - k) <= m.kappa_err)
    if m.monodromy is None:
        return frozenset({"ALG", "ALGstar_I", "ALGstar_Istar"})
    cls = m.monodromy if isinstance(m.monodromy, mono.MonodromyClass) else mono.classify_integral(m.monodromy)
    if cls.kind == "elliptic":
        return frozenset({f"ALG({cls.beta})"})
    if cls.name == "Id":
        return frozenset({"ALG(1)"})
    if cls.name == "-Id":
        return frozenset({"ALG(1/2)"})
    if cls.kind == "parabolic":
        return frozenset({"ALGstar_I" if cls.trace > 0 else "ALGstar_Istar"})
    raise AmbiguousDimension(f"hyperbolic monodromy {cls.name} does not occur for a d = 2 end")


# ---------------------------------------------------- asymptotic expansion

@dataclass(frozen=True)
class ExpansionFit:
    c: float
    ell: float
    remainder_exponent: float
    ok: bool


def spherical_average(V, r: float, n: int = 12) -> float:
    """Mean of V over the sphere of radius r (Gauss–Legendre in cos theta, uniform in phi)."""
    x, w = np.polynomial.legendre.leggauss(n)
    phi = 2 * math.pi * np.arange(2 * n) / (2 * n)
    st = np.sqrt(1 - x * x)
    X = r * st[:, None] * np.cos(phi)[None, :]
    Y = r * st[:, None] * np.sin(phi)[None, :]
    Z = r * np.broadcast_to(x[:, None], X.shape)
    vals = np.asarray(V(X, Y, Z), float)
    return float(np.sum(vals * w[:, None]) / (2 * 2 * n))


def asymptotic_expansion_check(end: ModelEnd | None, V=None, radii=None, min_exponent: float = 1.9) -> ExpansionFit:
    """Fit spherical means of V to c + l/(2r) + A r^-p and report the remainder exponent p.

    p is chosen by least squares over [-2, 8]; a remainder below roundoff
    reports p = inf. The check passes when p >= ``min_exponent``.
    """
    if V is None:
        if end is None or end.family != "ALF_A":
            raise ValueError("give V or an ALF_A end")
        src = _source_for(end)
        V = lambda x, y, z: src.evaluate(x, y, z)[0]
    radii = np.asarray(np.geomspace(10, 100, 12) if radii is None else radii, float)
    if radii.size < 4 or radii.max() / radii.min() < 10 * (1 - 1e-12):
        raise InsufficientRange("the expansion check needs at least four radii spanning a decade")
    means = np.array([spherical_average(V, r) for r in radii])

    def fit(p):
        A = np.stack([np.ones_like(radii), 1 / radii, radii ** -p], axis=1)
        coef, *_ = np.linalg.lstsq(A, means, rcond=None)
        return coef, float(np.sum((A @ coef - means) ** 2))

    base = np.stack([np.ones_like(radii), 1 / radii], axis=1)
    coef2, *_ = np.linalg.lstsq(base, means, rcond=None)
    if np.max(np.abs(base @ coef2 - means)) <= 1e-12 * max(1.0, float(np.max(np.abs(means)))):
        return ExpansionFit(float(coef2[0]), float(2 * coef2[1]), math.inf, True)
    grid = np.linspace(-2, 8, 201)
    grid = grid[(np.abs(grid) > 1e-9) & (np.abs(grid - 1) > 1e-9)]
    errs = [fit(p)[1] for p in grid]
    i = int(np.argmin(errs))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    p = float(minimize_scalar(lambda q: fit(q)[1], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10}).x)
    coef, _ = fit(p)
    return ExpansionFit(float(coef[0]), float(2 * coef[1]), p, p >= min_exponent)
