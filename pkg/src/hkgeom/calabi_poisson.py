"""Mode-by-mode Poisson solver on the Calabi model [2, inf) x N^3 in the moment coordinate z.

Each nilmanifold mode k reduces the equation to

    u_k'' - (j_k^2 z^2 + lam_k) u_k = v_k(z) z,

solved by variation of parameters against an explicit fundamental pair.
For j > 0 the pair involves H_{-h-1}(y) = int_0^inf exp(-t^2 - 2 t y) t^h dt,
which over- or underflows quickly, so everything is carried in logs.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

log = logging.getLogger(__name__)

RESONANCE_TOL = 1e-9
QUAD_NODES = 8
_WINDOW_CELLS = 48
_WINDOW_NODES = 10
LAPLACE_CONSTANT = 1 + math.sqrt(math.pi)


class ResonantWeight(ValueError):
    pass


class TailDivergence(RuntimeError):
    pass


class NoEnvelope(ValueError):
    pass


@dataclass(frozen=True)
class CalabiMode:
    k: int
    j: int
    lam: float
    multiplicity: int = 1

    def __post_init__(self):
        if self.j < 0 or int(self.j) != self.j:
            raise ValueError("j must be a non-negative integer")
        if self.lam < self.j - 1e-12:
            raise ValueError(f"mode {self.k}: lam = {self.lam} < j = {self.j}")

    @property
    def h(self) -> float:
        """Solves lam = (2h + 1) j; only defined for j > 0."""
        if self.j == 0:
            raise ValueError("h is defined for j > 0 only")
        return max((self.lam / self.j - 1) / 2, 0.0)

    def slice_eigenvalue(self, z0: float = 2.0) -> float:
        return self.lam / (2 * z0) + 2 * z0 * self.j ** 2

    @property
    def kind(self) -> str:
        if self.j > 0:
            return "hermite"
        return "linear" if self.lam == 0 else "exponential"


def heisenberg_spectrum(count: int, z0: float = 2.0) -> list[CalabiMode]:
    """First ``count`` modes of the standard Heisenberg nilmanifold, ordered by slice eigenvalue.

    j = 0 modes come from the base torus R^2 / Z^2 with lam = 4 pi^2 |m|^2;
    j >= 1 modes are the Landau levels lam = (2h + 1) j, h = 0, 1, ..., each
    with multiplicity 2j.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    entries: dict[tuple, int] = {}
    reach = int(math.isqrt(count)) + 4
    for a in range(-reach, reach + 1):
        for b in range(-reach, reach + 1):
            key = (0, 4 * math.pi ** 2 * (a * a + b * b))
            entries[key] = entries.get(key, 0) + 1
    for j in range(1, reach + 1):
        for h in range(reach * 2):
            entries[(j, float((2 * h + 1) * j))] = 2 * j
    ordered = sorted(entries.items(), key=lambda kv: (kv[0][1] / (2 * z0) + 2 * z0 * kv[0][0] ** 2, kv[0]))
    return [CalabiMode(i, j, lam, mult) for i, ((j, lam), mult) in enumerate(ordered[:count])]


# --------------------------------------------------------- Laplace integrals

def critical_point(h: float, c):
    """Positive maximiser of -t^2 + 2 c t + h log t (0 when h = 0 and c <= 0)."""
    c = np.asarray(c, float)
    root = np.sqrt(c * c / 4 + h / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        # avoid cancellation for c < 0
        small = np.where(root - c / 2 > 0, (h / 2) / (root - c / 2), 0.0)
    return np.where(c >= 0, c / 2 + root, small)


def _exponent(h, c, t):
    with np.errstate(divide="ignore"):
        lt = np.log(t) if h else 0.0
    return -t * t + 2 * c * t + h * lt


def log_laplace(h: float, c) -> np.ndarray:
    """log int_0^inf exp(-t^2 + 2 c t) t^h dt for an array of c.

    The exponent is concave with second derivative <= -2, so its mass sits in
    a window of width <= 7.5 around the maximiser; composite Gauss–Legendre
    over that window (substituting t = u^p when it reaches 0) is accurate to
    round-off.
    """
    if h < 0:
        raise ValueError("h must be non-negative")
    c = np.atleast_1d(np.asarray(c, float))
    ts = critical_point(h, c)
    safe = np.where(ts > 0, ts, 1.0)
    curv = 2 + np.where(ts > 0, h / safe / safe, 0.0)
    # peak width; for small h and c < 0 the t^h exp(2 c t) tail is wider than the curvature suggests
    linear_width = 1 / np.sqrt(2 + 4 * np.minimum(c, 0) ** 2)
    sigma = np.where(ts > 0, np.maximum(1 / np.sqrt(curv), linear_width), linear_width)
    width = np.minimum(60 * sigma, 7.5)
    a = np.maximum(ts - width, 0.0)
    b = ts + width
    gmax = np.where(ts > 0, _exponent(h, c, safe), 0.0)
    x, w = np.polynomial.legendre.leggauss(_WINDOW_NODES)
    edges = np.linspace(0, 1, _WINDOW_CELLS + 1)
    s = (0.5 * (edges[1:] + edges[:-1])[:, None] + 0.5 / _WINDOW_CELLS * x[None, :]).ravel()
    ws = np.tile(0.5 / _WINDOW_CELLS * w, _WINDOW_CELLS)
    out = np.empty_like(c)
    from_zero = a == 0
    if np.any(from_zero):
        # t = u^p makes t^h dt = p u^(p(h+1)-1) du smooth (or nearly so) at 0
        p = 1 if float(h).is_integer() else 2 if float(2 * h).is_integer() else 4
        ub = b[from_zero][:, None] ** (1 / p)
        u = ub * s[None, :]
        t = u ** p
        vals = np.exp(_exponent(h, c[from_zero][:, None], t) - gmax[from_zero][:, None]) * p * u ** (p - 1)
        out[from_zero] = gmax[from_zero] + np.log(np.sum(vals * ws * ub, axis=1))
    rest = ~from_zero
    if np.any(rest):
        span = (b - a)[rest][:, None]
        t = a[rest][:, None] + span * s[None, :]
        vals = np.exp(_exponent(h, c[rest][:, None], t) - gmax[rest][:, None])
        out[rest] = gmax[rest] + np.log(np.sum(vals * ws * span, axis=1))
    return out


def log_h_integral(h: float, y) -> np.ndarray:
    return log_laplace(h, -np.asarray(y, float))


def h_integral(h: float, y):
    """H_{-h-1}(y) = int_0^inf exp(-t^2 - 2 t y) t^h dt."""
    out = np.exp(log_h_integral(h, y))
    return float(out[0]) if np.ndim(y) == 0 else out


# ---------------------------------------------------------- fundamental pair

@dataclass(frozen=True)
class FundamentalPair:
    """Growing solution F and decaying solution U of u'' = (j^2 z^2 + lam) u, evaluated in logs."""

    mode: CalabiMode

    def log_F(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        m = self.mode
        if m.kind == "linear":
            return np.log(z)
        if m.kind == "exponential":
            return math.sqrt(m.lam) * z
        y = math.sqrt(m.j) * z
        return -m.j * z * z / 2 + log_laplace(m.h, y).reshape(z.shape)

    def log_U(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        m = self.mode
        if m.kind == "linear":
            return np.zeros_like(z)
        if m.kind == "exponential":
            return -math.sqrt(m.lam) * z
        y = math.sqrt(m.j) * z
        return -m.j * z * z / 2 + log_laplace(m.h, -y).reshape(z.shape)

    def F(self, z):
        return np.exp(self.log_F(z))

    def U(self, z):
        return np.exp(self.log_U(z))

    def derivatives(self, z):
        """(F', U') by differentiating under the integral: dH_{-h-1}/dy = -2 H_{-h-2}."""
        z = np.asarray(z, float)
        m = self.mode
        if m.kind == "linear":
            return np.ones_like(z), np.zeros_like(z)
        if m.kind == "exponential":
            r = math.sqrt(m.lam)
            return r * self.F(z), -r * self.U(z)
        sj, y = math.sqrt(m.j), math.sqrt(m.j) * z
        base = -m.j * z * z / 2
        dF = -m.j * z * self.F(z) + 2 * sj * np.exp(base + log_laplace(m.h + 1, y).reshape(z.shape))
        dU = -m.j * z * self.U(z) - 2 * sj * np.exp(base + log_laplace(m.h + 1, -y).reshape(z.shape))
        return dF, dU

    def log_W(self, z) -> np.ndarray:
        """log of W = F'U - FU', which is constant in z."""
        z = np.asarray(z, float)
        m = self.mode
        if m.kind == "linear":
            return np.zeros_like(z)
        if m.kind == "exponential":
            return np.full_like(z, math.log(2 * math.sqrt(m.lam)))
        y = math.sqrt(m.j) * z
        h = m.h
        p = log_laplace(h + 1, y) + log_laplace(h, -y)
        q = log_laplace(h, y) + log_laplace(h + 1, -y)
        return (math.log(2 * math.sqrt(m.j)) - m.j * z * z + np.logaddexp(p, q)).reshape(z.shape)

    def W(self, z):
        return np.exp(self.log_W(z))


def fundamental_pair(m: CalabiMode) -> FundamentalPair:
    return FundamentalPair(m)


@dataclass(frozen=True)
class Envelopes:
    mode: CalabiMode

    def _y(self, z):
        return math.sqrt(self.mode.j) * np.asarray(z, float)

    def t_k(self, z):
        return critical_point(self.mode.h, self._y(z))

    def s_k(self, z):
        return critical_point(self.mode.h, -self._y(z))

    def _value(self, z, sign, t):
        m, y = self.mode, self._y(z)
        val = -t * t + sign * 2 * t * y
        if m.h > 0:
            val = val + m.h * np.log(t)
        return -m.j * np.asarray(z, float) ** 2 / 2 + val

    def F_hat(self, z):
        return self._value(z, 1, self.t_k(z))

    def U_hat(self, z):
        return self._value(z, -1, self.s_k(z))


def envelopes(m: CalabiMode) -> Envelopes:
    if m.j == 0:
        raise NoEnvelope("envelopes are defined for j > 0")
    return Envelopes(m)


def wronskian_ratio(m: CalabiMode, z) -> np.ndarray:
    """W^-1 exp(F_hat + U_hat), bounded by a constant independent of the mode."""
    e = envelopes(m)
    p = FundamentalPair(m)
    return np.exp(e.F_hat(z) + e.U_hat(z) - p.log_W(z))


# ------------------------------------------------------------------ solver

@dataclass
class ModeSolution:
    mode: CalabiMode
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    tail: float = 0.0

    def residual(self) -> float:
        """sup |u'' - (j^2 z^2 + lam) u - v z| / sup |v z| by order-6 differences."""
        from .cone_poisson import _d1
        h = self.z[1] - self.z[0]
        upp = _d1(_d1(self.u, h), h)
        m = self.mode
        res = upp - (m.j ** 2 * self.z ** 2 + m.lam) * self.u - self.v * self.z
        # the one-sided end stencils of the repeated derivative are less accurate; use interior points
        core = slice(6, -6)
        scale = float(np.max(np.abs(self.v * self.z))) or 1.0
        return float(np.max(np.abs(res[core]))) / scale

    def weighted_constant(self, tau: float) -> float:
        """sup |u| z^(-p-tau) / sup |v| z^(-tau) with p = 3 for the j = lam = 0 mode and 2 otherwise."""
        p = 3 if self.mode.kind == "linear" else 2
        den = float(np.max(np.abs(self.v) * self.z ** (-tau)))
        return float(np.max(np.abs(self.u) * self.z ** (-p - tau))) / den if den else 0.0


def _grid(w, z_max, n):
    z = np.linspace(w, z_max, n + 1)
    x, wt = np.polynomial.legendre.leggauss(QUAD_NODES)
    h = (z_max - w) / n
    nodes = 0.5 * (z[1:] + z[:-1])[:, None] + 0.5 * h * x[None, :]
    return z, nodes, 0.5 * h * wt


def solve_mode(m: CalabiMode, v: Callable, w: float, z_max: float = 20.0, n: int = 800) -> ModeSolution:
    """Solve u'' - (j^2 z^2 + lam) u = v(z) z on [w, z_max].

    Uses u = -(U(z)/W int_w^z F v t dt + F(z)/W int_z^inf U v t dt) for the
    exponential and Hermite modes, and u = int_w^z int_w^t v(s) s ds dt for
    j = lam = 0. The tail past z_max is integrated with scipy's quad.
    """
    if w < 1:
        raise ValueError("w must be at least 1")
    z, nodes, wt = _grid(w, z_max, n)
    g_nodes = np.asarray(v(nodes), float) * nodes
    v_z = np.asarray(v(z), float) * np.ones_like(z)
    if m.kind == "linear":
        cell_a = np.sum(g_nodes * wt, axis=1)
        cell_b = np.sum(g_nodes * nodes * wt, axis=1)
        A = np.concatenate([[0.0], np.cumsum(cell_a)])
        B = np.concatenate([[0.0], np.cumsum(cell_b)])
        return ModeSolution(m, z, z * A - B, v_z)
    pair = FundamentalPair(m)
    lF_z, lU_z = pair.log_F(z), pair.log_U(z)
    lF_n, lU_n = pair.log_F(nodes), pair.log_U(nodes)
    lW = float(pair.log_W(np.array([z[0]]))[0])
    # forward: S_i = int_w^{z_i} F(t)/F(z_i) g dt
    cellF = np.sum(np.exp(lF_n - lF_z[1:, None]) * g_nodes * wt, axis=1)
    decay = np.exp(lF_z[:-1] - lF_z[1:])
    S = np.zeros_like(z)
    for i in range(n):
        S[i + 1] = S[i] * decay[i] + cellF[i]
    # backward: T_i = int_{z_i}^inf U(t)/U(z_i) g dt
    tail = _tail(pair, v, z_max, lU_z[-1])
    cellU = np.sum(np.exp(lU_n - lU_z[:-1, None]) * g_nodes * wt, axis=1)
    grow = np.exp(lU_z[1:] - lU_z[:-1])
    T = np.zeros_like(z)
    T[-1] = tail
    for i in range(n - 1, -1, -1):
        T[i] = T[i + 1] * grow[i] + cellU[i]
    prod = np.exp(lF_z + lU_z - lW)
    u = -prod * (S + T)
    return ModeSolution(m, z, u, v_z, tail)


def _tail(pair: FundamentalPair, v: Callable, z_max: float, lU_end: float) -> float:
    def integrand(t):
        return math.exp(float(pair.log_U(np.array([t]))[0]) - lU_end) * float(v(np.array([t]))[0]) * t

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(integrand, z_max, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
        except (integrate.IntegrationWarning, OverflowError) as exc:
            raise TailDivergence(f"mode {pair.mode.k}: decaying-kernel tail failed ({exc})") from exc
    if not math.isfinite(val):
        raise TailDivergence(f"mode {pair.mode.k}: decaying-kernel tail is not finite")
    return val


@dataclass
class CalabiSolution:
    modes: list
    solutions: list
    tau: float
    b: float
    per_mode_constants: list = field(default_factory=list)

    @property
    def z(self) -> np.ndarray:
        return self.solutions[0].z

    @property
    def C_star(self) -> float:
        return max(self.per_mode_constants, default=0.0)

    @property
    def global_constant(self) -> float:
        """sup_z sum_k |u_k(z)| / (b z^(3 + tau)), coefficients relative to sup-normalised modes."""
        if not self.solutions or self.b == 0:
            return 0.0
        total = sum(np.abs(s.u) * s.mode.multiplicity for s in self.solutions)
        return float(np.max(total / (self.b * self.z ** (3 + self.tau))))

    @property
    def assembly_bound(self) -> float:
        """Global constant implied by the per-mode ones: sum_k mult_k C_k B_k w^(p_k - 3) / b.

        Uses |u_k| <= C_k B_k z^(p_k + tau) and z >= w > 1, p_k <= 3.
        """
        if not self.solutions or self.b == 0:
            return 0.0
        total = 0.0
        for s, c in zip(self.solutions, self.per_mode_constants):
            p = 3 if s.mode.kind == "linear" else 2
            B = float(np.max(np.abs(s.v) * s.z ** (-self.tau)))
            total += s.mode.multiplicity * c * B * s.z[0] ** (p - 3)
        return total / self.b

    def max_residual(self) -> float:
        return max((s.residual() for s in self.solutions if np.any(s.v)), default=0.0)

    def fitted_exponent(self, index: int = 0) -> float:
        s = self.solutions[index]
        keep = s.z >= s.z[-1] / 4
        return float(np.polyfit(np.log(s.z[keep]), np.log(np.abs(s.u[keep]) + 1e-300), 1)[0])

    def assemble(self, phi: np.ndarray) -> np.ndarray:
        """u on (z, slice point) from sampled eigenfunctions phi[k, point]."""
        return sum(np.outer(s.u, phi[i]) for i, s in enumerate(self.solutions))


def solve(modes: Sequence[CalabiMode], v: Sequence[Callable], tau: float, w: float,
          b: float | None = None, z_max: float = 20.0, n: int = 800) -> CalabiSolution:
    """Solve mode by mode and report the weighted certificates.

    ``b`` is the decay certificate sup_z sum_k |v_k| z^(-tau); it is measured
    on the grid when not supplied.
    """
    if tau >= 0:
        raise ValueError("tau must be negative")
    if abs(tau + 3) <= RESONANCE_TOL:
        raise ResonantWeight("tau = -3 is excluded")
    if len(modes) != len(v):
        raise ValueError("one coefficient function per mode")
    sols = [solve_mode(m, f, w, z_max, n) for m, f in zip(modes, v)]
    consts = [s.weighted_constant(tau) for s in sols]
    if b is None:
        z = sols[0].z if sols else np.array([w])
        b = float(np.max(sum(np.abs(s.v) * s.mode.multiplicity for s in sols) * z ** (-tau))) if sols else 0.0
    out = CalabiSolution(list(modes), sols, tau, b, consts)
    if sols:
        log.info("calabi solve: %d modes, C* = %.4g, global C = %.4g", len(sols), out.C_star, out.global_constant)
    return out
