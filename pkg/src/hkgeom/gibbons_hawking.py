"""Circle-invariant hyperkähler metrics from positive harmonic functions on 3D charts.

Charts have axes (x, y, z, t); every field is constant along t and is stored
with a length-1 t axis. The circle coordinate t has period ``circle_length``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .discrete_calculus import (
    BOUNDARY_LAYER,
    Curvature,
    FormField,
    GridChart,
    MetricField,
    exterior_derivative,
    hodge_star,
    interior_mask,
    partial,
    riemann_curvature,
)
from .triple_algebra import DefiniteTriple

log = logging.getLogger(__name__)

KINDS = ("multi_center", "log_radial", "linear", "constant")
PATCH_SIZE = 9
PATCH_ORDER = 6
# patch spacing relative to the distance from the nearest singular set
PATCH_FRACTION = 0.02


class SingularTooClose(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class BoundaryClipped(ValueError):
    pass


@dataclass(frozen=True)
class Source:
    """Closed-form harmonic function and gauge potential of one kind."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        p = dict(self.params)
        if self.kind == "multi_center":
            centers = np.atleast_2d(np.asarray(p.get("centers", [(0.0, 0.0, 0.0)]), float))
            if centers.shape[1] != 3 or centers.shape[0] == 0:
                raise ValueError("centers must be a non-empty list of 3D points")
            weights = np.asarray(p.get("weights", [1.0] * len(centers)), float)
            if weights.shape != (len(centers),) or np.any(weights <= 0):
                raise ValueError("one positive weight per center is required")
            constant = float(p.get("constant", 0.0))
            if constant < 0:
                raise ValueError("the constant term must be non-negative")
            p = {"centers": centers, "weights": weights, "constant": constant}
        elif self.kind in ("log_radial", "linear"):
            key = "k" if self.kind == "log_radial" else "b"
            val = float(p.get(key, 1.0))
            if val <= 0:
                raise ValueError(f"{key} must be positive")
            p = {key: val}
        else:
            c = float(p.get("c", 1.0))
            if c <= 0:
                raise ValueError("the constant potential must be positive")
            p = {"c": c}
        object.__setattr__(self, "params", p)

    @property
    def centers(self) -> np.ndarray:
        return self.params["centers"] if self.kind == "multi_center" else np.zeros((0, 3))

    def default_circle_length(self) -> float:
        if self.kind == "multi_center":
            return 2 * math.pi * float(np.min(self.params["weights"]))
        return 2 * math.pi

    def strings_for(self, point) -> np.ndarray:
        """+1 (string along -z) for centers at or below ``point``, -1 otherwise."""
        c = self.centers
        return np.where(float(point[2]) >= c[:, 2], 1.0, -1.0) if len(c) else np.zeros(0)

    def evaluate(self, x, y, z, strings=None):
        """V and (A_x, A_y, A_z) at broadcast coordinates; ``dA = *dV`` in orientation dx dy dz."""
        p = self.params
        zero = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z)))
        if self.kind == "constant":
            return zero + p["c"], (zero, zero, zero)
        if self.kind == "linear":
            b = p["b"]
            return b * z + zero, (zero, b * x + zero, zero)
        if self.kind == "log_radial":
            k = p["k"]
            r2 = x * x + y * y + zero
            return 0.5 * k * np.log(r2), (k * z * y / r2, -k * z * x / r2, zero)
        centers, weights = p["centers"], p["weights"]
        if strings is None:
            strings = np.ones(len(centers))
        V = zero + p["constant"]
        Ax, Ay = zero.copy(), zero.copy()
        for (cx, cy, cz), w, s in zip(centers, weights, strings):
            X, Y, Z = x - cx, y - cy, z - cz
            r = np.sqrt(X * X + Y * Y + Z * Z)
            V = V + w / (2 * r)
            # a (1 - s cos) dphi up to sign: singular only on the half-axis s z < 0
            q = 0.5 * w * s / (r * (r + s * Z))
            Ax = Ax + q * Y
            Ay = Ay - q * X
        return V, (Ax, Ay, zero)

    def singular_distance(self, x, y, z, strings=None):
        """Distance to the nearest center or Dirac string (or to the r <= 1 cylinder for log_radial)."""
        if self.kind == "log_radial":
            return np.sqrt(x * x + y * y) - 1.0
        if self.kind != "multi_center":
            return np.full(np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z)), np.inf)
        centers = self.params["centers"]
        if strings is None:
            strings = np.ones(len(centers))
        out = None
        for (cx, cy, cz), s in zip(centers, strings):
            X, Y, Z = x - cx, y - cy, z - cz
            rho = np.sqrt(X * X + Y * Y)
            d = np.where(s * Z < 0, rho, np.sqrt(rho * rho + Z * Z))
            out = d if out is None else np.minimum(out, d)
        return out


@dataclass(frozen=True, eq=False)
class GHPotential:
    base_chart: GridChart
    V: np.ndarray
    A: FormField
    kind: str
    source: Source
    guard: float
    tube: float

    def valid_mask(self, layer: int = 0) -> np.ndarray:
        """Samples outside the guard balls, the string tubes and ``layer`` boundary cells."""
        x, y, z = self.base_chart.coordinates()
        mask = np.ones(self.base_chart.extents, dtype=bool)
        if self.kind == "multi_center":
            for cx, cy, cz in self.source.centers:
                X, Y, Z = x - cx, y - cy, z - cz
                rho2 = X * X + Y * Y
                mask &= rho2 + Z * Z > self.guard ** 2
                mask &= ~((Z < 0) & (rho2 < self.tube ** 2))
        elif self.kind == "log_radial":
            mask &= np.broadcast_to(x * x + y * y > (1.0 + self.guard) ** 2, mask.shape)
        if layer:
            mask &= interior_mask(self.base_chart, layer)
        return mask

    def harmonicity_residual(self, order: int = 2, layer: int = BOUNDARY_LAYER) -> float:
        """Largest |flat Laplacian of V| over valid interior samples."""
        lap = sum(partial(partial(self.V, a, self.base_chart, order), a, self.base_chart, order)
                  for a in range(3))
        return _masked_max(lap, self.valid_mask(layer))

    def monopole_residual(self, order: int = 2, layer: int = BOUNDARY_LAYER) -> float:
        """Largest component of dA - *dV over valid interior samples."""
        chart = self.base_chart
        dV = exterior_derivative(FormField(chart, 0, {(): self.V}), order)
        diff = exterior_derivative(self.A, order) - hodge_star(dV, MetricField.flat(chart))
        mask = self.valid_mask(layer)
        return max(_masked_max(v, mask) for v in diff.components.values())


def _masked_max(arr, mask) -> float:
    vals = np.abs(np.broadcast_to(arr, mask.shape))[mask]
    return float(vals.max()) if vals.size else 0.0


def make_potential(kind: str, params: dict | None, chart: GridChart,
                   guard: float | None = None, tube: float | None = None) -> GHPotential:
    """Sample a closed-form potential and gauge on a 3D base chart.

    The multi-center gauge puts every Dirac string along -z. ``guard`` and
    ``tube`` (default three cells, at least 0.25) bound the excluded
    neighbourhoods of centers and strings.
    """
    if chart.dim != 3:
        raise ValueError("the base chart must be three-dimensional")
    src = Source(kind, dict(params or {}))
    hmax = max(chart.spacing)
    guard = max(0.25, 3 * hmax) if guard is None else float(guard)
    tube = guard if tube is None else float(tube)
    if src.kind == "multi_center" and guard <= 2 * hmax:
        raise SingularTooClose(f"guard radius {guard} must exceed two cells ({2 * hmax})")
    if src.kind == "linear" and chart.periodic[0]:
        raise ValueError("the linear gauge A = b x dy is not periodic in x")
    if src.kind == "log_radial" and chart.periodic[2]:
        raise ValueError("the log_radial gauge is not periodic in z")
    if src.kind == "multi_center" and any(chart.periodic):
        raise ValueError("multi-center potentials need an open chart")
    lo = np.array([chart.axis(a)[0] for a in range(3)])
    hi = np.array([chart.axis(a)[-1] for a in range(3)])
    for c in src.centers:
        outside = np.linalg.norm(np.maximum(np.maximum(lo - c, c - hi), 0.0))
        gap = outside if outside > 0 else float(np.min(np.minimum(c - lo, hi - c)))
        if gap < guard:
            raise SingularTooClose(f"center {tuple(c)} lies within the guard radius of the chart boundary")
    x, y, z = chart.coordinates()
    if src.kind == "log_radial" and np.min(x * x + y * y) <= 1.0:
        raise SingularTooClose("log_radial needs every sample at axis distance r > 1 (V > 0)")
    with np.errstate(divide="ignore", invalid="ignore"):
        V, A = src.evaluate(x, y, z)
    if not (np.all(np.isfinite(V)) and all(np.all(np.isfinite(a)) for a in A)):
        raise SingularTooClose("a sample sits exactly on a center or Dirac string; shift the grid")
    pot = GHPotential(chart, _compact(V), FormField(chart, 1, {(i,): _compact(a) for i, a in enumerate(A)}),
                      src.kind, src, guard, tube)
    valid = pot.valid_mask()
    if np.any(np.broadcast_to(pot.V, valid.shape)[valid] <= 0):
        raise ValueError("V must be positive on the valid samples")
    return pot


def _compact(arr) -> np.ndarray:
    """Collapse axes along which ``arr`` is constant to length 1."""
    arr = np.asarray(arr, float)
    for a in range(arr.ndim):
        if arr.shape[a] > 1:
            first = np.take(arr, [0], axis=a)
            if np.array_equal(np.broadcast_to(first, arr.shape), arr):
                arr = first
    return arr


@dataclass(frozen=True, eq=False)
class GHGeometry:
    total_chart: GridChart
    triple: DefiniteTriple
    metric: MetricField
    potential: GHPotential
    circle_length: float

    @property
    def source(self) -> Source:
        return self.potential.source

    def valid_mask(self, layer: int = 0) -> np.ndarray:
        return self.potential.valid_mask(layer)[..., None]

    def ricci_residual(self, order: int = 2, layer: int = BOUNDARY_LAYER) -> float:
        """Largest Ricci component over valid interior samples (zero for exact hyperkähler data)."""
        mask = self.valid_mask(layer)
        curv = riemann_curvature(self.metric, order)
        return max(_masked_max(v, mask) for v in curv.ricci.values())

    def closedness_residual(self, order: int = 2, layer: int = BOUNDARY_LAYER) -> np.ndarray:
        """Pointwise max over the three forms and components of |d omega_a|, zero off the valid set."""
        mask = self.valid_mask(layer)
        out = np.zeros(mask.shape)
        for w in self.triple.omega:
            for v in exterior_derivative(w, order).components.values():
                out = np.maximum(out, np.abs(np.broadcast_to(v, mask.shape)))
        return np.where(mask, out, 0.0)


def _lift(arr) -> np.ndarray:
    return np.asarray(arr, float)[..., None]


def _triple_components(V, A):
    Ax, Ay, Az = A
    one = np.ones_like(V)
    return (
        {(0, 1): V, (0, 2): -Ax, (1, 2): -Ay, (2, 3): one},
        {(1, 2): V, (0, 1): Ay, (0, 2): Az, (0, 3): one},
        {(0, 2): -V, (0, 1): -Ax, (1, 2): Az, (1, 3): one},
    )


def _metric_components(V, A):
    g = {}
    for i in range(3):
        for j in range(i, 3):
            g[(i, j)] = A[i] * A[j] / V + (V if i == j else 0.0)
        g[(i, 3)] = A[i] / V
    g[(3, 3)] = 1.0 / V
    return g


def build_geometry(p: GHPotential, circle_length: float | None = None, nt: int = 8) -> GHGeometry:
    """Assemble the triple Vdx^dy + dz^theta (and cyclic) and the metric, theta = dt + A."""
    L = p.source.default_circle_length() if circle_length is None else float(circle_length)
    if L <= 0:
        raise ValueError("circle length must be positive")
    b = p.base_chart
    chart = GridChart(b.extents + (nt,), b.spacing + (L / nt,), b.origin + (0.0,), b.periodic + (True,))
    V = _lift(p.V)
    A = tuple(_lift(p.A[(i,)]) for i in range(3))
    triple = DefiniteTriple(chart, tuple(FormField(chart, 2, c) for c in _triple_components(V, A)))
    metric = MetricField(chart, _metric_components(V, A))
    return GHGeometry(chart, triple, metric, p, L)


def geometry(kind: str, params: dict | None, chart: GridChart, circle_length: float | None = None,
             nt: int = 8, **kw) -> GHGeometry:
    return build_geometry(make_potential(kind, params, chart, **kw), circle_length, nt)


def closedness_convergence(kind: str, params: dict | None, lower, upper, n: int,
                           exclusion: float = 0.5, circle_length: float | None = None) -> tuple[float, float, float]:
    """Closedness residuals on nested node grids with n and 2n - 1 nodes per axis.

    Both maxima are taken over the coarse nodes outside the ``exclusion``
    neighbourhoods, so the ratio compares errors at identical points.
    Returns (coarse, fine, coarse / fine).
    """
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    res = []
    for m in (n, 2 * n - 1):
        h = (upper - lower) / (m - 1)
        chart = GridChart((m,) * 3, tuple(h), tuple(lower))
        geo = geometry(kind, params, chart, circle_length, guard=exclusion, tube=exclusion)
        r = geo.closedness_residual(layer=BOUNDARY_LAYER if m == n else 2 * BOUNDARY_LAYER)[..., 0]
        res.append(r if m == n else r[::2, ::2, ::2])
    mask = (res[0] > 0) | (res[1] > 0)
    coarse, fine = float(res[0][mask].max(initial=0.0)), float(res[1][mask].max(initial=0.0))
    return coarse, fine, (coarse / fine if fine > 0 else math.inf)


# ---------------------------------------------------------------- local patches

def patch_spacing(src: Source, point, h_max: float = 0.05) -> float:
    d = float(src.singular_distance(*np.asarray(point, float), src.strings_for(point)))
    if d <= 0:
        raise SingularTooClose(f"point {tuple(point)} is on a singular set")
    return min(h_max, PATCH_FRACTION * d)


def patch_metric(src: Source, point, h: float | None = None, n: int = PATCH_SIZE,
                 circle_length: float = 2 * math.pi) -> MetricField:
    """GH metric on an n^3 patch centred at ``point``, gauge strings pointing away from it."""
    point = np.asarray(point, float)
    if h is None:
        h = patch_spacing(src, point)
    if (src.singular_distance(*point, src.strings_for(point)) <= (n // 2 + 1) * h * math.sqrt(3)):
        raise SingularTooClose("patch overlaps a singular set")
    chart = GridChart((n, n, n, 4), (h, h, h, circle_length / 4),
                      tuple(point - (n // 2) * h) + (0.0,), (False, False, False, True))
    x, y, z, _ = chart.coordinates()
    V, A = src.evaluate(x[..., 0:1], y[..., 0:1], z[..., 0:1], src.strings_for(point))
    V = np.broadcast_to(V, (n, n, n, 1))
    A = tuple(np.broadcast_to(a, (n, n, n, 1)) for a in A)
    return MetricField(chart, _metric_components(V, A))


def _center(arr):
    arr = np.asarray(arr)
    return float(arr[tuple(s // 2 for s in arr.shape)])


def _tensor_at_center(curv: Curvature, n: int = 4) -> np.ndarray:
    R = np.zeros((n,) * 4)
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(n):
                    if a != b and c != d:
                        R[a, b, c, d] = _center(np.broadcast_to(curv.R(a, b, c, d), curv.scalar.shape)
                                                if np.ndim(curv.R(a, b, c, d)) else curv.R(a, b, c, d))
    return R


def point_curvature(src: Source, point, h: float | None = None, order: int = PATCH_ORDER) -> float:
    """``norm_sq`` (a quarter of R_abcd R^abcd) at ``point`` from a local patch."""
    curv = riemann_curvature(patch_metric(src, point, h), order)
    return _center(curv.norm_sq)


@dataclass(frozen=True)
class LevelSetGeometry:
    """Hypersurface data at one point, in an orthonormal tangent frame; normal points up the level function."""

    II: np.ndarray
    curvature_term: float
    dphi_norm: float
    sqrt_det: float

    @property
    def H(self) -> float:
        return float(np.trace(self.II))

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.II ** 2)))

    def transgression(self, lam: float = 0.0) -> float:
        """Integrand of the Pfaffian transgression without the 1/(4 pi^2) factor."""
        II, H = self.II, self.H
        return (lam * H + self.curvature_term + H ** 3 / 3
                + 2.0 / 3.0 * float(np.trace(II @ II @ II)) - H * float(np.sum(II * II)))


def level_set_geometry(g: MetricField, phi: np.ndarray, order: int = PATCH_ORDER,
                       curvature: Curvature | None = None) -> LevelSetGeometry:
    """Second fundamental form of the level set of ``phi`` through the patch centre.

    II = Hess_g(phi)/|d phi|_g on tangent vectors. ``curvature_term`` is
    sum R(e_i, e_k, e_k, e_j) II_ij in the sign convention of
    riemann_curvature, which equals minus the sectional-curvature contraction.
    """
    chart = g.chart
    n = chart.dim
    phi = np.asarray(phi, float)
    d1 = [partial(phi, a, chart, order) for a in range(n)]
    dphi = np.array([_center(np.broadcast_to(d, phi.shape)) for d in d1])
    hess = np.array([[_center(np.broadcast_to(partial(d1[a], b, chart, order), phi.shape))
                      for b in range(n)] for a in range(n)])
    hess = 0.5 * (hess + hess.T)
    G = np.array([[_center(g[i, j]) for j in range(n)] for i in range(n)])
    # dg[i, j, k] = d_k g_ij
    dg = np.array([[[_center(np.broadcast_to(partial(g[i, j], k, chart, order), phi.shape))
                     for k in range(n)] for j in range(n)] for i in range(n)])
    # Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij)/2 with dg[i, j, k] = d_k g_ij
    gam1 = 0.5 * (np.einsum("jli->lij", dg) + np.einsum("ilj->lij", dg) - np.einsum("ijl->lij", dg))
    Ginv = np.linalg.inv(G)
    gam2 = np.einsum("kl,lij->kij", Ginv, gam1)
    hess = hess - np.einsum("kij,k->ij", gam2, dphi)
    norm = float(np.sqrt(dphi @ Ginv @ dphi))
    # orthonormal coframe: columns of E are g-orthonormal vectors
    E = np.linalg.inv(np.linalg.cholesky(G)).T
    nu = E.T @ dphi / norm
    Q, _ = np.linalg.qr(np.column_stack([nu, np.eye(n)]))
    T = E @ Q[:, 1:n]
    II = T.T @ hess @ T / norm
    if curvature is None:
        curvature = riemann_curvature(g, order)
    R = _tensor_at_center(curvature, n)
    Rf = np.einsum("abcd,ai,bk,cl,dj->iklj", R, T, T, T, T)
    term = float(sum(Rf[i, k, k, j] * II[i, j] for i in range(n - 1) for j in range(n - 1) for k in range(n - 1)))
    return LevelSetGeometry(0.5 * (II + II.T), term, norm, math.sqrt(float(np.linalg.det(G))))


# ------------------------------------------------------------ Gauss–Bonnet

@dataclass(frozen=True)
class GaussBonnet:
    radius: float
    bulk: float
    boundary: float

    @property
    def chi(self) -> float:
        return (self.bulk + self.boundary) / (8 * math.pi ** 2)


def _gl(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


class _Domain:
    """Exhaustion by spheres about one point, or by prolate spheroids about two foci on a z-line."""

    def __init__(self, center, focal=0.0):
        self.center = np.asarray(center, float)
        self.d = float(focal)

    def coord_of_radius(self, R):
        return R if self.d == 0 else math.acosh(R / self.d)

    def point(self, u, v, ph):
        c, d = self.center, self.d
        if d == 0:
            return c + u * np.array([math.sin(v) * math.cos(ph), math.sin(v) * math.sin(ph), math.cos(v)])
        s = d * math.sinh(u) * math.sin(v)
        return c + np.array([s * math.cos(ph), s * math.sin(ph), d * math.cosh(u) * math.cos(v)])

    def jacobian(self, u, v):
        if self.d == 0:
            return u * u * math.sin(v)
        d = self.d
        return d ** 3 * math.sinh(u) * math.sin(v) * (math.sinh(u) ** 2 + math.sin(v) ** 2)

    def level(self, x, y, z):
        X, Y, Z = x - self.center[0], y - self.center[1], z - self.center[2]
        if self.d == 0:
            return np.sqrt(X * X + Y * Y + Z * Z)
        r1 = np.sqrt(X * X + Y * Y + (Z - self.d) ** 2)
        r2 = np.sqrt(X * X + Y * Y + (Z + self.d) ** 2)
        return np.arccosh((r1 + r2) / (2 * self.d))

    def u_edges(self, U, first):
        if self.d == 0:
            edges, e = [U], U
            while e > first:
                e /= 2
                edges.append(e)
            return [0.0] + sorted(edges)
        return list(np.linspace(0.0, U, max(2, int(math.ceil(U / 0.5))) + 1))


def _domain_for(src: Source) -> _Domain:
    c = src.centers
    if len(c) == 0:
        return _Domain(np.zeros(3))
    if len(c) == 1:
        return _Domain(c[0])
    if len(c) == 2 and np.allclose(c[0, :2], c[1, :2]):
        mid = 0.5 * (c[0] + c[1])
        return _Domain(mid, 0.5 * abs(c[0, 2] - c[1, 2]))
    raise ValueError("Gauss-Bonnet integration supports at most two centers on a line parallel to z")


def gauss_bonnet_profile(geo: GHGeometry, radii, n_u: int = 6, n_v: int = 6, n_phi: int = 2,
                         h_max: float = 0.05, check_chart: bool = True) -> list[GaussBonnet]:
    """Bulk curvature energy and boundary transgression for an increasing family of domains.

    For one center (or none) the domains are coordinate balls of the given
    radii about it; for two centers on a vertical line they are the prolate
    spheroids with those semi-major axes. Quadrature is Gauss–Legendre in
    the radial and polar coordinates and trapezoidal in azimuth; the
    curvature at each node comes from a local order-6 patch.
    """
    src = geo.source
    radii = sorted(float(r) for r in radii)
    if not radii or radii[0] <= 0:
        raise ValueError("radii must be positive")
    dom = _domain_for(src)
    if dom.d and radii[0] <= dom.d:
        raise ValueError("spheroid semi-major axes must exceed the focal half-distance")
    if check_chart:
        b = geo.potential.base_chart
        lo = np.array([b.axis(a)[0] for a in range(3)])
        hi = np.array([b.axis(a)[-1] for a in range(3)])
        Rmax = radii[-1]
        if np.any(dom.center - Rmax < lo) or np.any(dom.center + Rmax > hi):
            raise BoundaryClipped(f"boundary radius {Rmax} leaves the chart")
    L = geo.circle_length
    Us = [dom.coord_of_radius(R) for R in radii]
    edges = sorted(set(dom.u_edges(Us[-1], 0.05 * radii[0]) + Us))
    vs, wv = _gl(0.0, math.pi / 2, n_v)
    vs2, wv2 = _gl(math.pi / 2, math.pi, n_v)
    vs, wv = np.concatenate([vs, vs2]), np.concatenate([wv, wv2])
    phis = 2 * math.pi * (np.arange(n_phi) + 0.25) / n_phi
    wphi = 2 * math.pi / n_phi

    def bulk_at(u, v, ph):
        pt = dom.point(u, v, ph)
        h = patch_spacing(src, pt, h_max)
        g = patch_metric(src, pt, h, circle_length=L)
        return _center(riemann_curvature(g, PATCH_ORDER).norm_sq) * _center(g.sqrt_det())

    partial_sums = []
    acc = 0.0
    for a, b_ in zip(edges[:-1], edges[1:]):
        us, wu = _gl(a, b_, n_u)
        for u, w1 in zip(us, wu):
            for v, w2 in zip(vs, wv):
                jac = dom.jacobian(u, v)
                for ph in phis:
                    acc += w1 * w2 * wphi * jac * bulk_at(u, v, ph)
        partial_sums.append((b_, acc * L))

    out = []
    for R, U in zip(radii, Us):
        bulk = next(s for e, s in partial_sums if abs(e - U) <= 1e-12 * max(1.0, U))
        total = 0.0
        for v, w2 in zip(vs, wv):
            jac = dom.jacobian(U, v)
            for ph in phis:
                pt = dom.point(U, v, ph)
                h = patch_spacing(src, pt, h_max)
                g = patch_metric(src, pt, h, circle_length=L)
                x, y, z, _ = g.chart.coordinates()
                phi = np.broadcast_to(dom.level(x, y, z), g.chart.extents[:3] + (1,))
                lg = level_set_geometry(g, phi)
                total += w2 * wphi * jac * lg.transgression(0.0) * lg.dphi_norm * lg.sqrt_det
        boundary = 8 * math.pi ** 2 * total * L / (4 * math.pi ** 2)
        out.append(GaussBonnet(R, bulk, boundary))
        log.info("gauss-bonnet R=%g bulk=%.6g boundary=%.6g chi=%.6f", R, bulk, boundary, out[-1].chi)
    return out


def gauss_bonnet_energy(geo: GHGeometry, boundary_radius: float, **kw) -> GaussBonnet:
    return gauss_bonnet_profile(geo, [boundary_radius], **kw)[0]


# ---------------------------------------------------------- volume growth

def base_distances(chart: GridChart, V: np.ndarray, source_index) -> np.ndarray:
    """Graph distance in the quotient metric V (dx^2 + dy^2 + dz^2) on the 26-neighbour grid."""
    ext = chart.extents
    Vf = np.broadcast_to(np.asarray(V, float), ext)
    idx = np.arange(int(np.prod(ext))).reshape(ext)
    rows, cols, wts = [], [], []
    h = np.asarray(chart.spacing)
    for off in np.ndindex(3, 3, 3):
        o = np.array(off) - 1
        if tuple(o) <= (0, 0, 0):
            continue
        src_sl, dst_sl = [], []
        ok = True
        for a, k in enumerate(o):
            n = ext[a]
            if chart.periodic[a]:
                src_sl.append(np.arange(n))
                dst_sl.append((np.arange(n) + k) % n)
            else:
                if n <= abs(k):
                    ok = False
                src_sl.append(np.arange(max(0, -k), n - max(0, k)))
                dst_sl.append(np.arange(max(0, k), n + min(0, k)))
        if not ok:
            continue
        s = idx[np.ix_(*src_sl)].ravel()
        d = idx[np.ix_(*dst_sl)].ravel()
        length = float(np.linalg.norm(o * h))
        w = length * np.sqrt(0.5 * (Vf.ravel()[s] + Vf.ravel()[d]))
        rows.append(s)
        cols.append(d)
        wts.append(w)
    rows, cols, wts = np.concatenate(rows), np.concatenate(cols), np.concatenate(wts)
    graph = coo_matrix((wts, (rows, cols)), shape=(idx.size, idx.size)).tocsr()
    dist = dijkstra(graph, directed=False, indices=int(np.ravel_multi_index(source_index, ext)))
    return dist.reshape(ext)


def nearest_index(chart: GridChart, point) -> tuple:
    return tuple(int(np.clip(np.rint((p - o) / h), 0, n - 1))
                 for p, o, h, n in zip(point, chart.origin, chart.spacing, chart.extents))


def ball_volumes(chart: GridChart, V: np.ndarray, fiber_volume, base_point, radii,
                 allow_faces=(), density=None) -> tuple[np.ndarray, np.ndarray]:
    """Volumes of metric balls about ``base_point`` for a metric fibred over the base chart.

    Distance is measured in the quotient metric V (flat) on the base, so the
    fiber diameter is neglected. The volume density per base cell is
    ``density`` (default V, the Gibbons–Hawking value) times ``fiber_volume``.
    Raises BoundaryClipped if a ball reaches an open face not in ``allow_faces``
    (pairs (axis, 0 or 1)).
    """
    dist = base_distances(chart, V, nearest_index(chart, base_point))
    dens = np.broadcast_to(V if density is None else density, chart.extents) * fiber_volume * chart.cell_volume()
    vols = []
    for r in radii:
        inside = dist <= r
        for a in range(3):
            if chart.periodic[a]:
                continue
            for side in (0, 1):
                if (a, side) in allow_faces:
                    continue
                face = np.take(inside, [0 if side == 0 else chart.extents[a] - 1], axis=a)
                if np.any(face):
                    raise BoundaryClipped(f"ball of radius {r} reaches face {(a, side)}")
        vols.append(float(np.sum(dens[inside])))
    return np.asarray(vols), dist


def fit_exponent(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs.size < 3:
        raise InsufficientSamples("an exponent fit needs at least three radii")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@dataclass(frozen=True)
class Profile:
    rows: list
    kappa: float
    decay: float


def curvature_profile(geo: GHGeometry, radii, base_point=None, allow_faces=(),
                      samples_per_shell: int = 8) -> Profile:
    """Ball volume and max |Rm| against distance from ``base_point``.

    |Rm| at radius r is the largest local-patch value over up to
    ``samples_per_shell`` valid nodes whose distance is within 5% of r.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise InsufficientSamples("at least three radii are required")
    p = geo.potential
    chart = p.base_chart
    if base_point is None:
        c = p.source.centers
        base_point = c[0] if len(c) else np.array([np.mean(chart.axis(a)) for a in range(3)])
    valid = p.valid_mask()
    Vfill = np.where(np.broadcast_to(valid, chart.extents), np.broadcast_to(p.V, chart.extents),
                     np.max(np.broadcast_to(p.V, chart.extents)[np.broadcast_to(valid, chart.extents)]))
    vols, dist = ball_volumes(chart, Vfill, geo.circle_length, base_point, radii, allow_faces)
    coords = np.stack(np.meshgrid(*[chart.axis(a) for a in range(3)], indexing="ij"), -1)
    rows = []
    for r, vol in zip(radii, vols):
        shell = np.argwhere((np.abs(dist - r) <= 0.05 * r) & valid)
        if len(shell) == 0:
            raise InsufficientSamples(f"no valid samples at distance {r}")
        pick = shell[np.linspace(0, len(shell) - 1, min(samples_per_shell, len(shell))).astype(int)]
        rm = max(math.sqrt(max(point_curvature(p.source, coords[tuple(i)], h=_profile_h(p.source, coords[tuple(i)])),
                                0.0)) for i in pick)
        rows.append((r, rm, vol))
    kappa = fit_exponent(radii, vols)
    rms = [row[1] for row in rows]
    decay = fit_exponent(radii, rms) if min(rms) > 0 else float("-inf")
    return Profile(rows, kappa, decay)


def _profile_h(src: Source, point) -> float:
    d = float(src.singular_distance(*point, src.strings_for(point)))
    return PATCH_FRACTION * d if math.isfinite(d) else 0.05


# ------------------------------------------------------- measure, fibers

def renormalized_density(geo: GHGeometry) -> tuple[np.ndarray, np.ndarray]:
    """(fiber length times quotient volume density, e^{-f} dvol_{g_inf}) per unit d^3x.

    Both are read off the 4D metric: |d_t|^2 = g_tt = 1/V, g_inf is the
    quotient metric g_ij - g_it g_jt / g_tt, and f = (1/2) log V.
    """
    g = geo.metric
    gtt = g[3, 3]
    quot = [[g[i, j] - g[i, 3] * g[j, 3] / gtt for j in range(3)] for i in range(3)]
    from .discrete_calculus import _det
    vol_inf = np.sqrt(_det(quot))
    fiber = geo.circle_length * np.sqrt(gtt)
    V = 1.0 / gtt
    f = 0.5 * np.log(V)
    return fiber * vol_inf / geo.circle_length, np.exp(-f) * vol_inf


def fiber_second_fundamental_form(src: Source, point, h: float = 0.01) -> LevelSetGeometry:
    """Second fundamental form of the circle-invariant hypersurface {z = const} through ``point``."""
    g = patch_metric(src, point, h)
    x, y, z, _ = g.chart.coordinates()
    return level_set_geometry(g, np.broadcast_to(z, g.chart.extents[:3] + (1,)))
