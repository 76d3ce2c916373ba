"""Special Kaehler model metrics on a punctured disk.

Every model is written as ``omega = (i/2) * density * dzeta ^ dzetabar`` in a
holomorphic coordinate ``zeta`` centred at the puncture. Points are given in
polar form ``(r, phi)`` where ``phi`` is a lift to the universal cover, so
multivalued quantities (``log zeta``, ``zeta**beta``, ``F**(1/k)``) follow the
branch obtained by continuation from ``phi = 0``.

Period conventions (``tau = dw/dz``):

* cone(beta): ``z - i w = zeta**beta``, ``tau = i``.
* typeI(f): ``z = zeta``, ``tau = (-i log zeta + f) / (2 pi)``.
* typeII(f): ``z = (zeta / 2)**(1/2)``, ``tau = (-i log zeta + f) / (2 pi)``.
* typeIII(beta, F): ``z - i w = zeta**beta``, ``xi = (tau - i)/(tau + i)``
  with ``xi = F`` for ``beta = 1/2`` and ``xi = F**(1/k)`` otherwise.
"""

from __future__ import annotations

import ast
import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate as sp_integrate

from .discrete_calculus import GridChart, partial
from .monodromy import I, I_star, R_tilde, act_on_tau, rotation

__all__ = [
    "SKModel",
    "PeriodSample",
    "NotKahler",
    "NotConvex",
    "NotNormalized",
    "PunctureTooClose",
    "ADMISSIBLE_BETA",
    "cayley",
    "inverse_cayley",
    "density",
    "period",
    "monodromy_of_model",
    "cubic_differential",
    "theta_norm_sq",
    "scalar_curvature_ring",
    "verify_curvature_identity",
    "continue_period",
    "tangent_cone_angle",
    "hessian_form",
    "parse_polynomial",
]

FLAT_TOL = 1e-8
ADMISSIBLE_BETA = tuple(Fraction(*p) for p in [(1, 2), (1, 3), (2, 3), (1, 4), (3, 4), (1, 6), (5, 6), (1, 1)])


class NotKahler(ValueError):
    pass


class NotConvex(ValueError):
    pass


class NotNormalized(ValueError):
    pass


class PunctureTooClose(ValueError):
    pass


def _poly(coeffs: Sequence[complex]) -> np.ndarray:
    c = np.asarray(coeffs, dtype=complex).ravel()
    return c if c.size else np.zeros(1, dtype=complex)


def _polyval(c: np.ndarray, zeta):
    return np.polynomial.polynomial.polyval(zeta, c)


def _polyder(c: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1, dtype=complex)


@dataclass(frozen=True)
class SKModel:
    """A local model; ``f`` and ``F`` are Taylor coefficients in ascending powers of ``zeta``."""

    kind: str
    beta: Fraction | None = None
    f: tuple = field(default=(0j,))
    F: tuple = field(default=(0j, 1 + 0j))

    def __post_init__(self):
        if self.kind not in ("cone", "typeI", "typeII", "typeIII"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("cone", "typeIII"):
            if self.beta is None:
                raise ValueError(f"{self.kind} needs beta")
            beta = Fraction(self.beta).limit_denominator(12)
            allowed = ADMISSIBLE_BETA if self.kind == "cone" else ADMISSIBLE_BETA[:-1]
            if beta not in allowed:
                raise ValueError(f"beta={self.beta} is not admissible for {self.kind}")
            object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "f", tuple(complex(v) for v in self.f))
        object.__setattr__(self, "F", tuple(complex(v) for v in self.F))
        if self.kind == "typeIII":
            c = _poly(self.F)
            if abs(c[0]) > 0:
                raise ValueError("F must vanish at the puncture")
            if not np.any(c != 0):
                raise ValueError("F must not vanish identically")

    @classmethod
    def cone(cls, beta) -> "SKModel":
        return cls("cone", Fraction(beta))

    @classmethod
    def type_I(cls, f=(0j,)) -> "SKModel":
        return cls("typeI", None, tuple(f))

    @classmethod
    def type_II(cls, f=(0j,)) -> "SKModel":
        return cls("typeII", None, tuple(f))

    @classmethod
    def type_III(cls, beta, F=(0j, 1 + 0j)) -> "SKModel":
        return cls("typeIII", Fraction(beta), (0j,), tuple(F))

    @property
    def root_order(self) -> int:
        """``k`` with ``xi = F**(1/k)``."""
        if self.kind != "typeIII":
            return 1
        den = self.beta.denominator
        return {2: 1, 4: 2, 3: 3, 6: 3}[den]

    @property
    def vanishing_order(self) -> int:
        c = _poly(self.F)
        return int(np.flatnonzero(c != 0)[0])

    def branch_consistent(self) -> bool:
        """True when the continuation of ``xi`` matches the affine monodromy of ``(z, w)``."""
        if self.kind != "typeIII":
            return True
        k = self.root_order
        return Fraction(self.vanishing_order, k) % 1 == (-2 * self.beta) % 1


@dataclass(frozen=True)
class PeriodSample:
    tau: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        if np.any(np.imag(self.tau) <= 0):
            raise NotKahler("Im tau must be positive")
        if np.any(np.abs(self.xi) >= 1):
            raise NotKahler("|xi| must be below 1")

    @classmethod
    def from_tau(cls, tau) -> "PeriodSample":
        tau = np.asarray(tau, dtype=complex)
        return cls(tau, cayley(tau))


def cayley(tau):
    return (tau - 1j) / (tau + 1j)


def inverse_cayley(xi):
    return 1j * (1 + xi) / (1 - xi)


def _xi_and_derivative(m: SKModel, r, phi):
    """``xi`` and ``d xi / d zeta`` on the lift."""
    zeta = r * np.exp(1j * phi)
    c = _poly(m.F)
    k = m.root_order
    if k == 1:
        return _polyval(c, zeta), _polyval(_polyder(c), zeta)
    order = m.vanishing_order
    g = c[order:]
    gval = _polyval(g, zeta)
    g0 = g[0]
    # G**(1/k) = G(0)**(1/k) * (G/G(0))**(1/k), principal branch near the puncture
    groot = g0 ** (1.0 / k) * (gval / g0) ** (1.0 / k)
    lead = r ** (order / k) * np.exp(1j * order * phi / k)
    xi = lead * groot
    Fval = _polyval(c, zeta)
    Fder = _polyval(_polyder(c), zeta)
    dxi = xi * Fder / (k * Fval)
    return xi, dxi


def period(m: SKModel, r, phi=0.0):
    """Local period ``tau`` at ``zeta = r e^{i phi}`` on the lift."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if m.kind == "cone":
        return np.full(np.broadcast(r, phi).shape, 1j)
    if m.kind in ("typeI", "typeII"):
        zeta = r * np.exp(1j * phi)
        logz = np.log(r) + 1j * phi
        return (-1j * logz + _polyval(_poly(m.f), zeta)) / (2 * math.pi)
    xi, _ = _xi_and_derivative(m, r, phi)
    return inverse_cayley(xi)


def _check_point(r):
    if np.any(np.asarray(r) <= 0):
        raise PunctureTooClose("sample lies on the puncture")


def density(m: SKModel, r, phi=0.0):
    """Conformal factor ``lambda`` with ``omega = (i/2) lambda dzeta ^ dzetabar``."""
    _check_point(r)
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if m.kind == "cone":
        b = float(m.beta)
        lam = b * b * r ** (2 * b - 2) * np.ones_like(phi)
    elif m.kind in ("typeI", "typeII"):
        zeta = r * np.exp(1j * phi)
        base = -np.log(r) + np.imag(_polyval(_poly(m.f), zeta))
        lam = base / (2 * math.pi) if m.kind == "typeI" else base / (16 * math.pi * r)
    else:
        b = float(m.beta)
        xi, _ = _xi_and_derivative(m, r, phi)
        lam = 0.25 * (1 - np.abs(xi) ** 2) * b * b * r ** (2 * b - 2)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise NotKahler(f"{m.kind} density is not positive on the requested domain")
    return lam


def monodromy_of_model(m: SKModel):
    """Counterclockwise monodromy: real rotation for cones, integral class otherwise."""
    if m.kind == "cone":
        rot = rotation(float(m.beta))
        # quarter-turn multiples are integral; other admissible angles carry irrational sines
        return rot.round().astype(int) if m.beta.denominator in (1, 2, 4) else rot
    if m.kind == "typeI":
        return np.array(I(1).rows(), dtype=int)
    if m.kind == "typeII":
        return np.array(I_star(1).rows(), dtype=int)
    return np.array(R_tilde(m.beta).rows(), dtype=int)


def model_frame_monodromy(m: SKModel) -> np.ndarray:
    """Monodromy acting on ``tau`` in the model's own special coordinates."""
    if m.kind in ("cone", "typeIII"):
        return rotation(float(m.beta))
    return monodromy_of_model(m).astype(float)


def cubic_differential(m: SKModel, r, phi=0.0):
    """``d tau / d z`` in the model's special coordinate."""
    _check_point(r)
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    zeta = r * np.exp(1j * phi)
    if m.kind == "cone":
        return np.zeros(np.broadcast(r, phi).shape, dtype=complex)
    if m.kind in ("typeI", "typeII"):
        dtau = (_polyval(_polyder(_poly(m.f)), zeta) - 1j / zeta) / (2 * math.pi)
        if m.kind == "typeI":
            return dtau
        # z = (zeta/2)^(1/2): dz/dzeta = 1/(4 z)
        z = np.sqrt(r / 2) * np.exp(0.5j * phi)
        return dtau * 4 * z
    b = float(m.beta)
    xi, dxi = _xi_and_derivative(m, r, phi)
    du = b * r ** (b - 1) * np.exp(1j * (b - 1) * phi)
    return 4j * dxi / ((1 - xi) ** 3 * du)


def theta_norm_sq(m: SKModel, r, phi=0.0):
    """``|Theta|^2 = |d tau/dz|^2 / (4 (Im tau)^3)``, so that ``S = 4 |Theta|^2``."""
    t = cubic_differential(m, r, phi)
    im = np.imag(period(m, r, phi))
    return np.abs(t) ** 2 / (4 * im ** 3)


def _log_polar_chart(r_in: float, r_out: float, n_r: int, n_phi: int) -> GridChart:
    s0, s1 = math.log(r_in), math.log(r_out)
    hs = (s1 - s0) / (n_r - 1)
    return GridChart((n_r, n_phi), (hs, 2 * math.pi / n_phi), (s0, 0.0), (False, True))


def scalar_curvature_ring(m: SKModel, r_in: float, r_out: float, n_r: int = 200, n_phi: int = 64):
    """Scalar curvature ``S = 2K`` of the model metric by finite differences.

    Uses log-polar coordinates ``(s, phi)``, ``zeta = e^{s + i phi}``, where the
    metric is ``lambda r^2 (ds^2 + dphi^2)`` and ``K = -Laplacian(log mu) / (2 mu)``.
    Returns ``(chart, S)`` with ``S`` on the full chart.
    """
    if r_in <= 0:
        raise PunctureTooClose("ring must avoid the puncture")
    chart = _log_polar_chart(r_in, r_out, n_r, n_phi)
    s, phi = chart.coordinates()
    r = np.exp(s)
    mu = density(m, r, phi) * r * r
    logmu = np.broadcast_to(np.log(mu), chart.extents)
    lap = partial(partial(logmu, 0, chart), 0, chart) + partial(partial(logmu, 1, chart), 1, chart)
    return chart, -lap / mu


def verify_curvature_identity(m: SKModel, r_in: float, r_out: float, n_r: int = 200, n_phi: int = 64,
                              margin: int = 2) -> dict:
    """Compare finite-difference ``S`` with ``4 |Theta|^2`` on an annulus.

    Returns a dict with the maximum relative mismatch (``rel``), the maximum
    absolute values of both sides, and the samples used.
    """
    chart, S = scalar_curvature_ring(m, r_in, r_out, n_r, n_phi)
    s, phi = chart.coordinates()
    r = np.exp(s)
    rhs = np.broadcast_to(4 * theta_norm_sq(m, r, phi), chart.extents)
    sl = (slice(margin, chart.extents[0] - margin), slice(None))
    S_in, rhs_in = S[sl], rhs[sl]
    if np.max(np.abs(rhs_in)) == 0:
        # flat model: relative error is undefined, report exact agreement up to FLAT_TOL
        rel = 0.0 if np.max(np.abs(S_in)) <= FLAT_TOL else math.inf
    else:
        rel = float(np.max(np.abs(S_in - rhs_in) / np.abs(rhs_in)))
    return {
        "rel": rel,
        "max_S": float(np.max(np.abs(S_in))),
        "max_4theta2": float(np.max(np.abs(rhs_in))),
        "r": np.broadcast_to(r, chart.extents)[sl],
        "phi": np.broadcast_to(phi, chart.extents)[sl],
        "S": S_in,
        "rhs": rhs_in,
    }


def continue_period(m: SKModel, r: float, phi0: float = 0.0) -> tuple[complex, complex]:
    """Transport ``tau`` once counterclockwise around the circle ``|zeta| = r``.

    Integrates ``d tau / d phi = i zeta d tau / d zeta`` numerically from the
    value at ``phi0``; returns ``(tau_start, tau_end)``.
    """
    tau0 = complex(period(m, r, phi0))

    def dtau_dphi(phi):
        zeta = r * cmath.exp(1j * phi)
        if m.kind == "cone":
            return 0j
        if m.kind in ("typeI", "typeII"):
            d = (_polyval(_polyder(_poly(m.f)), zeta) - 1j / zeta) / (2 * math.pi)
        else:
            xi, dxi = _xi_and_derivative(m, np.float64(r), np.float64(phi))
            d = 2j * complex(dxi) / (1 - complex(xi)) ** 2
        return 1j * zeta * d

    opts = dict(limit=400, epsabs=1e-13, epsrel=1e-13)
    re = sp_integrate.quad(lambda p: dtau_dphi(p).real, phi0, phi0 + 2 * math.pi, **opts)[0]
    im = sp_integrate.quad(lambda p: dtau_dphi(p).imag, phi0, phi0 + 2 * math.pi, **opts)[0]
    return tau0, tau0 + complex(re, im)


def continuation_error(m: SKModel, r: float, phi0: float = 0.3) -> float:
    """Distance between the continued period and the Moebius image under the model monodromy."""
    start, end = continue_period(m, r, phi0)
    return abs(end - act_on_tau(model_frame_monodromy(m), start))


def tangent_cone_angle(m: SKModel, eps: float = 1e-40) -> float:
    """Cone angle at the puncture from circumference over distance on a small circle."""

    def sqrt_lam(r):
        return float(np.mean(np.sqrt(density(m, r, np.linspace(0, 2 * math.pi, 16, endpoint=False)))))

    ref = sqrt_lam(eps)
    # distance to the puncture with r = eps e^{-t}; the integrand decays at least like e^{-t/6}
    rad = sp_integrate.quad(lambda t: sqrt_lam(eps * math.exp(-t)) / ref * math.exp(-t), 0, 250.0,
                            limit=400, epsabs=0.0, epsrel=1e-10)[0]
    return 2 * math.pi / rad


@dataclass(frozen=True)
class HessianForm:
    W: np.ndarray
    det: np.ndarray
    J: np.ndarray


def hessian_form(phi: np.ndarray, chart: GridChart, tol: float = 1e-6, margin: int = 2) -> HessianForm:
    """Hessian metric ``W = Hess phi`` on a 2D affine chart and its complex structure.

    ``J`` acts on covectors: ``J dx1 = -phi^{12} dx1 + phi^{11} dx2`` and
    ``J dx2 = -phi^{22} dx1 + phi^{12} dx2`` with ``phi^{ij}`` the inverse Hessian.
    Arrays carry the 2x2 matrix in the last two axes.
    """
    if chart.dim != 2:
        raise ValueError("hessian_form needs a two-dimensional chart")
    phi = np.broadcast_to(np.asarray(phi, dtype=float), chart.extents)
    d = [partial(phi, a, chart) for a in range(2)]
    W = np.empty(chart.extents + (2, 2))
    for a in range(2):
        for b in range(2):
            W[..., a, b] = partial(d[a], b, chart)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    sl = (slice(margin, chart.extents[0] - margin), slice(margin, chart.extents[1] - margin))
    W = W[sl]
    det = W[..., 0, 0] * W[..., 1, 1] - W[..., 0, 1] ** 2
    if np.any(W[..., 0, 0] <= 0) or np.any(det <= 0):
        raise NotConvex("Hessian is not positive definite")
    if np.max(np.abs(det - 1.0)) > tol:
        raise NotNormalized(f"Hessian determinant ranges over [{det.min():.6g}, {det.max():.6g}], not 1")
    inv11, inv22, inv12 = W[..., 1, 1] / det, W[..., 0, 0] / det, -W[..., 0, 1] / det
    J = np.empty_like(W)
    J[..., 0, 0], J[..., 0, 1] = -inv12, inv11
    J[..., 1, 0], J[..., 1, 1] = -inv22, inv12
    JJ = np.einsum("...ij,...jk->...ik", J, J)
    if np.max(np.abs(JJ + np.eye(2))) > 10 * tol:
        raise NotNormalized("J^2 differs from -Id")
    return HessianForm(W, det, J)


_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Add, ast.Sub, ast.Mult,
            ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Load)


def parse_polynomial(text: str, max_degree: int = 24) -> tuple[complex, ...]:
    """Taylor coefficients of a polynomial in ``z`` written with ``+ - * / ^ **`` and complex literals."""
    tree = ast.parse(text.replace("^", "**").replace("zeta", "z"), mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(f"unsupported syntax in {text!r}")
        if isinstance(node, ast.Name) and node.id != "z":
            raise ValueError(f"unknown symbol {node.id!r} in {text!r}")
    code = compile(tree, "<poly>", "eval")
    n = 2 * (max_degree + 1)
    nodes = np.exp(2j * math.pi * np.arange(n) / n)
    vals = np.array([complex(eval(code, {"__builtins__": {}}, {"z": w})) for w in nodes])
    coeffs = np.fft.fft(vals) / n
    re, im = coeffs.real.copy(), coeffs.imag.copy()
    re[np.abs(re) < 1e-12] = 0.0
    im[np.abs(im) < 1e-12] = 0.0
    coeffs = re + 1j * im
    if np.any(coeffs[max_degree + 1:] != 0):
        raise ValueError(f"{text!r} is not a polynomial of degree <= {max_degree}")
    out = coeffs[:max_degree + 1]
    last = np.flatnonzero(out)
    return tuple(complex(v) for v in out[:last[-1] + 1]) if last.size else (0j,)
