"""Weighted Poisson solver on flat cones C(W) by separation of variables, and the d = 1 ODE.

Radial functions live on a grid uniform in t = log r. Kernel integrals use
composite Gauss–Legendre in t; tails to infinity use scipy's adaptive
quadrature.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, special

log = logging.getLogger(__name__)

CROSS_SECTIONS = ("circle", "sphere", "projective_sphere")
RESONANCE_TOL = 1e-9
QUAD_NODES = 8


class ResonantWeight(ValueError):
    pass


class TailDivergence(RuntimeError):
    pass


class InsufficientRange(ValueError):
    pass


@dataclass(frozen=True)
class ConeMode:
    """One eigenvalue of the cross-section Laplacian and its radial exponents."""

    j: int
    lam: float
    multiplicity: int
    label: int
    mu_plus: float
    mu_minus: float

    def kernels(self, d: int):
        """Growing and decaying homogeneous solutions and c with W = G'D - GD' = c r^(1-d)."""
        if self.lam == 0 and d == 2:
            return (np.log, lambda r: np.ones_like(r), 1.0)
        mp, mm = self.mu_plus, self.mu_minus
        return (lambda r: r ** mp, lambda r: r ** mm, mp - mm)


def exponents(d: int, lam: float) -> tuple[float, float]:
    """Roots of mu^2 + (d - 2) mu - lam = 0, larger first."""
    disc = math.sqrt((d - 2) ** 2 + 4 * lam)
    return (-(d - 2) + disc) / 2, (-(d - 2) - disc) / 2


@dataclass(frozen=True)
class ConeSpectrum:
    d: int
    cross_section: str
    beta: float
    modes: tuple

    @property
    def area(self) -> float:
        return {"circle": 2 * math.pi * self.beta, "sphere": 4 * math.pi, "projective_sphere": 2 * math.pi}[
            self.cross_section]

    @property
    def gamma(self) -> tuple:
        """Exceptional weights {|mu_j^-| : j > 0} in (0, 1)."""
        return tuple(sorted({abs(m.mu_minus) for m in self.modes[1:] if 0 < abs(m.mu_minus) < 1}))

    @property
    def gamma_growth(self) -> tuple:
        """Weights with 2 - delta = mu_j^+, where neither kernel branch gives r^(2 - delta) growth."""
        return tuple(sorted({round(2 - m.mu_plus, 15) for m in self.modes[1:] if 0 < 2 - m.mu_plus < 1}))

    def j0(self, delta: float) -> int:
        """Largest j whose growing kernel stays below r^(2 - delta); those modes integrate from R."""
        best = 0
        for m in self.modes[1:]:
            if m.mu_plus < 2 - delta:
                best = m.j
        return best

    def components(self):
        for m in self.modes:
            for c in range(m.multiplicity):
                yield m, c

    def quadrature(self, n: int):
        """Nodes and weights integrating band-limited functions on the cross-section exactly."""
        if self.cross_section == "circle":
            th = 2 * math.pi * self.beta * np.arange(n) / n
            return (th,), np.full(n, 2 * math.pi * self.beta / n)
        x, w = np.polynomial.legendre.leggauss(n)
        ph = 2 * math.pi * np.arange(2 * n) / (2 * n)
        theta = np.repeat(np.arccos(x), 2 * n)
        phi = np.tile(ph, n)
        weights = np.repeat(w, 2 * n) * (2 * math.pi / (2 * n))
        if self.cross_section == "projective_sphere":
            weights = weights / 2
        return (theta, phi), weights

    def eigenfunctions(self, nodes) -> np.ndarray:
        """L^2-orthonormal real eigenfunctions, one row per (mode, component)."""
        rows = []
        if self.cross_section == "circle":
            (th,) = nodes
            L = 2 * math.pi * self.beta
            for m in self.modes:
                k = m.label / self.beta
                if m.label == 0:
                    rows.append(np.full_like(th, 1 / math.sqrt(L), dtype=float))
                else:
                    rows.append(np.cos(k * th) / math.sqrt(L / 2))
                    rows.append(np.sin(k * th) / math.sqrt(L / 2))
            return np.array(rows)
        theta, phi = nodes
        scale = math.sqrt(2) if self.cross_section == "projective_sphere" else 1.0
        for m in self.modes:
            l = m.label
            for mm in range(-l, l + 1):
                y = special.sph_harm_y(l, abs(mm), theta, phi)
                if mm > 0:
                    y = math.sqrt(2) * (-1) ** mm * y.real
                elif mm < 0:
                    y = math.sqrt(2) * (-1) ** mm * y.imag
                else:
                    y = y.real
                rows.append(scale * np.asarray(y, float))
        return np.array(rows)


def build_spectrum(d: int, cross_section: str, mode_count: int, beta: float = 1.0) -> ConeSpectrum:
    """First ``mode_count`` distinct eigenvalues of the cross-section with multiplicities."""
    if mode_count < 1:
        raise ValueError("mode_count must be at least 1")
    if cross_section not in CROSS_SECTIONS:
        raise ValueError(f"unknown cross-section {cross_section!r}")
    if (d == 2) != (cross_section == "circle"):
        raise ValueError("d = 2 cones have circle cross-sections, d = 3 cones spherical ones")
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if beta <= 0:
        raise ValueError("beta must be positive")
    modes = []
    for j in range(mode_count):
        if cross_section == "circle":
            lam, mult, label = (j / beta) ** 2, 1 if j == 0 else 2, j
        else:
            l = j if cross_section == "sphere" else 2 * j
            lam, mult, label = float(l * (l + 1)), 2 * l + 1, l
        if j == 0:
            mp, mm = (0.0, 0.0) if d == 2 else (0.0, -1.0)
        else:
            mp, mm = exponents(d, lam)
        modes.append(ConeMode(j, lam, mult, label, mp, mm))
    return ConeSpectrum(d, cross_section, float(beta), tuple(modes))


@dataclass(frozen=True)
class RadialGrid:
    R: float
    r_max: float
    n: int

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, math.log(self.r_max / self.R), self.n + 1)

    @property
    def r(self) -> np.ndarray:
        return self.R * np.exp(self.t)

    @property
    def dt(self) -> float:
        return math.log(self.r_max / self.R) / self.n

    def cell_nodes(self):
        x, w = np.polynomial.legendre.leggauss(QUAD_NODES)
        t = self.t
        mid = 0.5 * (t[1:] + t[:-1])[:, None]
        return self.R * np.exp(mid + 0.5 * self.dt * x[None, :]), 0.5 * self.dt * w


def _cell_integrals(grid: RadialGrid, integrand: Callable) -> np.ndarray:
    """Per-cell integrals of integrand(s) ds over consecutive grid cells."""
    s, w = grid.cell_nodes()
    return np.sum(integrand(s) * s * w[None, :], axis=1)


@dataclass
class ConeSolution:
    spectrum: ConeSpectrum
    grid: RadialGrid
    delta: float
    coeffs: dict
    sources: dict
    tail_bounds: dict = field(default_factory=dict)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    def reconstruct(self, nodes) -> np.ndarray:
        """u on (radius, cross-section node) pairs."""
        phi = self.spectrum.eigenfunctions(nodes)
        out = np.zeros((self.r.size, phi.shape[1]))
        for i, key in enumerate(self.spectrum.components()):
            k = (key[0].j, key[1])
            if k in self.coeffs:
                out += np.outer(self.coeffs[k], phi[i])
        return out

    def residual(self, key) -> float:
        """sup |u'' + (d-1)/r u' - lam/r^2 u - f| by order-6 differences in t = log r."""
        mode = self.spectrum.modes[key[0]]
        u = self.coeffs[key]
        ut = _d1(u, self.grid.dt)
        utt = _d1(ut, self.grid.dt)
        r = self.r
        res = (utt + (self.spectrum.d - 2) * ut - mode.lam * u) / r ** 2 - self.sources[key]
        return float(np.max(np.abs(res)))

    def max_residual(self) -> float:
        return max((self.residual(k) for k in self.coeffs), default=0.0)

    def annulus_sup(self, values=None):
        """(inner radii, sup over A_{r,2r}) for dyadic annuli inside the grid."""
        r = self.r
        if values is None:
            values = np.sqrt(sum(c ** 2 for c in self.coeffs.values())) if self.coeffs else np.zeros_like(r)
        radii, sups = [], []
        a = r[0]
        while 2 * a <= r[-1] * (1 + 1e-12):
            sel = (r >= a) & (r <= 2 * a)
            radii.append(a)
            sups.append(float(np.max(np.abs(values[sel]))))
            a *= 2
        return np.array(radii), np.array(sups)

    def growth_exponent(self, start: float = 4.0) -> float:
        """Slope of log sup|u| over dyadic annuli with inner radius >= start * R.

        Annuli next to R are skipped: u and u' vanish there, which biases the slope upwards.
        """
        radii, sups = self.annulus_sup()
        keep = radii >= start * self.grid.R * (1 - 1e-12)
        radii, sups = radii[keep], sups[keep]
        if len(radii) < 2:
            raise InsufficientRange("growth fit needs at least two dyadic annuli")
        if np.all(sups == 0):
            return -math.inf
        keep = sups > 0
        return float(np.polyfit(np.log(radii[keep]), np.log(sups[keep]), 1)[0])

    def weighted_constant(self) -> float:
        """sup r^(delta - 2) |u| over sup r^delta |f| (mode coefficient l2 norms)."""
        r = self.r
        u = np.sqrt(sum(c ** 2 for c in self.coeffs.values()))
        f = np.sqrt(sum(np.asarray(c) ** 2 for c in self.sources.values()))
        fn = float(np.max(r ** self.delta * f))
        return float(np.max(r ** (self.delta - 2) * u)) / fn if fn > 0 else 0.0


def _d1(u, h):
    """Order-6 first derivative on a uniform grid with one-sided ends."""
    from .discrete_calculus import GridChart, partial
    chart = GridChart((u.size, 4), (h, 1.0), (0.0, 0.0))
    return partial(np.asarray(u, float)[:, None], 0, chart, 6)[:, 0]


def check_weight(spec: ConeSpectrum, delta: float) -> None:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    for g in spec.gamma + spec.gamma_growth:
        if abs(delta - g) <= RESONANCE_TOL:
            raise ResonantWeight(f"delta = {delta} is resonant ({g})")


def _solve_component(spec, mode, grid, delta, f, f_samples, tail_from_callable):
    d = spec.d
    G, D, c = mode.kernels(d)
    r = grid.r
    cellG = _cell_integrals(grid, lambda s: D(s) * f(s) * s ** (d - 1))
    cellD = _cell_integrals(grid, lambda s: G(s) * f(s) * s ** (d - 1))
    ID = np.concatenate([[0.0], np.cumsum(cellD)])
    tail_bound = 0.0
    if mode.j == 0 or mode.j <= spec.j0(delta):
        IG = np.concatenate([[0.0], np.cumsum(cellG)])
        return (G(r) * IG - D(r) * ID) / c, tail_bound
    # decaying-kernel integral to infinity: backward sums plus the tail past r_max
    if mode.mu_minus + d - 1 - delta >= -1:
        raise TailDivergence(f"mode {mode.j}: decaying kernel tail is not integrable at weight {delta}")
    if tail_from_callable:
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                # in t = log s a source in the weighted class decays like exp(-alpha t); stop at exp(-60)
                alpha = -(mode.mu_minus + d - delta)
                t0 = math.log(grid.r_max)
                t1 = min(t0 + 60.0 / alpha, 700.0)

                def integrand(t):
                    # D(s) s^d = s^(mu_minus + d) on this branch (lam > 0); the power form cannot overflow
                    return math.exp((mode.mu_minus + d) * t) * f(math.exp(t))

                end = abs(integrand(t1))
                tail, err = integrate.quad(integrand, t0, t1, epsabs=0.0, epsrel=1e-12, limit=400)
            except (integrate.IntegrationWarning, OverflowError) as exc:
                raise TailDivergence(f"mode {mode.j}: tail quadrature failed ({exc})") from exc
            scale = max(abs(integrand(t0)), abs(tail))
            if not end <= 1e-12 * scale:
                raise TailDivergence(f"mode {mode.j}: source does not decay at weight {delta}")
        if not math.isfinite(tail):
            raise TailDivergence(f"mode {mode.j}: tail integral is not finite")
    else:
        # extrapolate |f| <= sup(r^delta |f|) r^-delta past the grid; report the bound, add nothing
        fb = float(np.max(np.abs(f_samples) * r ** delta))
        expo = mode.mu_minus + d - delta
        tail = 0.0
        tail_bound = fb * grid.r_max ** expo / abs(expo)
    back = np.concatenate([np.cumsum(cellG[::-1])[::-1], [0.0]]) + tail
    return (-G(r) * back - D(r) * ID) / c, tail_bound


def solve(spec: ConeSpectrum, v, delta: float, R: float = 1.0, r_max: float = 100.0, n: int = 2000,
          angular_nodes: int | None = None) -> ConeSolution:
    """Solve Delta u = v on {r >= R} mode by mode.

    ``v`` is either a mapping {(j, component): f(r)} of coefficient
    functions, or an array of samples on (grid.r, cross-section quadrature
    nodes) which is projected onto the eigenfunctions. Modes with growing
    exponent below 2 - delta integrate both kernels from R; the others take
    the decaying kernel from infinity, which keeps |u| <= C r^(2 - delta).
    """
    check_weight(spec, delta)
    if R < 1:
        raise ValueError("inner radius R must be at least 1")
    grid = RadialGrid(float(R), float(r_max), int(n))
    coeffs, sources, tails = {}, {}, {}
    r = grid.r
    if isinstance(v, Mapping):
        items = {k: (fn, fn(r), True) for k, fn in v.items()}
    else:
        samples = np.asarray(v, float)
        nodes, weights = spec.quadrature(angular_nodes or _default_angular(spec))
        phi = spec.eigenfunctions(nodes)
        proj = samples @ (phi * weights).T
        items = {}
        for i, (m, c) in enumerate(spec.components()):
            col = proj[:, i]
            items[(m.j, c)] = (_interpolant(grid, col), col, False)
    for key, (fn, fs, exact) in items.items():
        j, comp = key
        mode = spec.modes[j]
        if comp >= mode.multiplicity:
            raise KeyError(f"mode {j} has {mode.multiplicity} components")
        coeffs[key], tails[key] = _solve_component(spec, mode, grid, delta, fn, fs, exact)
        sources[key] = np.asarray(fs, float)
    sol = ConeSolution(spec, grid, float(delta), coeffs, sources, tails)
    if coeffs:
        log.info("cone solve: d=%d delta=%g j0=%d C(delta)=%.4g", spec.d, delta, spec.j0(delta),
                 sol.weighted_constant())
    return sol


def _default_angular(spec: ConeSpectrum) -> int:
    top = spec.modes[-1].label
    return 4 * top + 8 if spec.cross_section == "circle" else 2 * top + 4


def _interpolant(grid: RadialGrid, values: np.ndarray) -> Callable:
    """Cubic spline in t = log r through projected samples."""
    from scipy.interpolate import CubicSpline
    spl = CubicSpline(grid.t, values)
    return lambda s: spl(np.log(np.asarray(s) / grid.R))


def truncation_bound(spec: ConeSpectrum, coeff_sup: Mapping[int, float], K: int, K2: int, k: int = 2) -> float:
    """Tail estimate sum_{K <= j < K2} C lam_j^-k with C fitted as max_j |f_j| lam_j^k over 0 < j < K."""
    C = max((coeff_sup.get(m.j, 0.0) * m.lam ** k for m in spec.modes[1:K]), default=0.0)
    return float(sum(C * m.multiplicity * m.lam ** (-k) for m in spec.modes[K:K2]))


# ------------------------------------------------------------------ d = 1

@dataclass(frozen=True)
class D1Solution:
    z: np.ndarray
    u: np.ndarray
    residual: float


def solve_d1(v: Callable, V: Callable, z: np.ndarray) -> D1Solution:
    """u with V^-1 u'' = v on the grid z, u and u' vanishing at z[0].

    Uses u(z) = int_{z0}^z (z - s) V(s) v(s) ds with 3-point Gauss–Legendre
    per cell (exact through degree 5).
    """
    z = np.asarray(z, float)
    if z.ndim != 1 or z.size < 8 or np.any(np.diff(z) <= 0):
        raise ValueError("z must be an increasing grid of at least 8 points")
    if np.any(np.asarray(V(z)) <= 0):
        raise ValueError("V must be positive on the range")
    x, w = np.polynomial.legendre.leggauss(3)
    a, b = z[:-1, None], z[1:, None]
    s = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    ws = 0.5 * (b - a) * w[None, :]
    g = np.asarray(V(s), float) * np.asarray(v(s), float)
    A = np.concatenate([[0.0], np.cumsum(np.sum(g * ws, axis=1))])
    B = np.concatenate([[0.0], np.cumsum(np.sum(g * s * ws, axis=1))])
    u = z * A - B
    res = _d1_residual(z, u, V, v)
    return D1Solution(z, u, res)


def _d1_residual(z, u, V, v) -> float:
    h = np.diff(z)
    if not np.allclose(h, h[0], rtol=1e-9):
        return math.nan
    upp = _d1(_d1(u, h[0]), h[0])
    return float(np.max(np.abs(upp / np.asarray(V(z), float) - np.asarray(v(z), float))))


# -------------------------------------------------------- weighted norms

@dataclass(frozen=True)
class WeightedNorm:
    delta: float
    k: int = 0
    alpha: float = 0.5
    R: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        if self.k < 0:
            raise ValueError("k must be non-negative")


def weighted_norm(r, values, n: WeightedNorm, theta=None, beta: float = 1.0, holder: bool = False) -> float:
    """C^k_delta norm (plus the C^{k,alpha}_delta seminorm if ``holder``) from samples.

    ``values`` has shape (len(r),) for radial functions or (len(r), len(theta))
    on a 2D cone of angle 2 pi beta, where k <= 1 is supported.
    """
    r = np.asarray(r, float)
    f = np.asarray(values, float)
    sel = r >= n.R
    r, f = r[sel], f[sel]
    if r.size == 0 or 2 * r[0] > r[-1] * (1 + 1e-12):
        raise InsufficientRange("samples must cover at least one dyadic annulus beyond R")
    derivs = [np.abs(f)]
    grads = [f]
    if theta is None:
        cur = f
        for m in range(1, n.k + 1):
            cur = np.gradient(cur, r, edge_order=2)
            grads.append(cur)
            derivs.append(np.abs(cur))
    else:
        if n.k > 1:
            raise ValueError("angular samples support k <= 1")
        theta = np.asarray(theta, float)
        if n.k == 1:
            fr = np.gradient(f, r, axis=0, edge_order=2)
            ft = np.gradient(f, theta, axis=1, edge_order=2)
            derivs.append(np.sqrt(fr ** 2 + (ft / r[:, None]) ** 2))
            grads.append(derivs[-1])
    total = 0.0
    starts = r[2 * r <= r[-1] * (1 + 1e-12)]
    for m, dm in enumerate(derivs):
        best = 0.0
        for a in starts:
            ann = (r >= a) & (r <= 2 * a)
            best = max(best, a ** (-n.delta + m) * float(np.max(dm[ann])))
        total += best
    if holder:
        total += _holder(r, grads[n.k], n, starts, theta, beta)
    return total


def _holder(r, g, n, starts, theta, beta):
    best = 0.0
    for a in starts:
        ann = np.where((r >= a) & (r <= 2 * a))[0]
        rr, gg = r[ann], g[ann]
        if theta is None:
            dist = np.abs(rr[:, None] - rr[None, :])
            diff = np.abs(gg[:, None] - gg[None, :])
        else:
            # neighbouring samples along each axis; flat cone distance
            dist = np.abs(np.diff(rr))[:, None] * np.ones(gg.shape[1])[None, :]
            diff = np.abs(np.diff(gg, axis=0))
            dth = np.abs(np.diff(theta))
            dist2 = rr[:, None] * dth[None, :]
            diff2 = np.abs(np.diff(gg, axis=1))
            dist = np.concatenate([dist.ravel(), dist2.ravel()])
            diff = np.concatenate([diff.ravel(), diff2.ravel()])
        inj = a * min(1.0, math.pi * beta)
        ok = (dist > 0) & (dist < inj)
        if np.any(ok):
            best = max(best, a ** (-n.delta + n.k + n.alpha) * float(np.max(diff[ok] / dist[ok] ** n.alpha)))
    return best
