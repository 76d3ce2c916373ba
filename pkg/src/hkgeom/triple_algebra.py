"""Definite triples of closed 2-forms on 4D grid charts.

Matrix-valued fields are stored samples-first: an array of shape ``S + (3, 3)``
where ``S`` is the (broadcast) sample shape of the chart.
"""
from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discrete_calculus import (
    FormField,
    GridChart,
    MetricField,
    exterior_derivative,
    hodge_star,
    _perm_sign,
    partial,
    read_field,
    wedge,
    write_field,
)

log = logging.getLogger(__name__)

RHO = 0.1
QNORM_RADIUS = 0.2
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
SELF_DUAL_TOL = 1e-8

_PAIRS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_LEVI3 = [((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
          ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)]


class NotDefinite(ValueError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} at sample {index}")
        self.index = index


class NotClosed(ValueError):
    pass


class OutsideLocalChart(ValueError):
    pass


class NoContraction(RuntimeError):
    pass


def TF(B: np.ndarray) -> np.ndarray:
    """Trace-free part over the trailing 3x3 axes."""
    out = np.array(B, dtype=float)
    tr = np.trace(out, axis1=-2, axis2=-1) / 3.0
    for i in range(3):
        out[..., i, i] -= tr
    return out


@dataclass(frozen=True, eq=False)
class DefiniteTriple:
    chart: GridChart
    omega: tuple
    vol0: object = 1.0

    def __post_init__(self):
        if self.chart.dim != 4:
            raise ValueError("definite triples live on 4D charts")
        if len(self.omega) != 3 or any(w.degree != 2 or w.chart != self.chart for w in self.omega):
            raise ValueError("omega must be three 2-forms on the triple's chart")
        vol0 = np.asarray(self.vol0, dtype=float)
        if np.any(vol0 <= 0):
            raise ValueError("reference volume density must be positive")
        object.__setattr__(self, "omega", tuple(self.omega))
        object.__setattr__(self, "vol0", vol0)

    @classmethod
    def flat(cls, chart: GridChart, scale: float = 1.0) -> "DefiniteTriple":
        """dx0^dx1 + dx2^dx3 and its two cyclic partners, self-dual for dx0^dx1^dx2^dx3."""
        s = float(scale)
        return cls(chart, (
            FormField(chart, 2, {(0, 1): s, (2, 3): s}),
            FormField(chart, 2, {(0, 2): s, (1, 3): -s}),
            FormField(chart, 2, {(0, 3): s, (1, 2): s}),
        ))

    def closedness_residual(self, order: int = 2, layer: int = 2) -> float:
        return max(exterior_derivative(w, order).max_abs(interior=layer) for w in self.omega)

    def check_closed(self, tol: float, order: int = 2) -> None:
        res = self.closedness_residual(order)
        if res > tol:
            raise NotClosed(f"closedness residual {res:.3e} exceeds {tol:.3e}")

    def __add__(self, theta) -> "DefiniteTriple":
        return DefiniteTriple(self.chart, tuple(w + t for w, t in zip(self.omega, theta)), self.vol0)


def _pairing(a: FormField, b: FormField) -> np.ndarray:
    """Coefficient of a^b against dx0^dx1^dx2^dx3."""
    return np.asarray(wedge(a, b)[(0, 1, 2, 3)], dtype=float)


def _matrix_of_pairings(xs, ys, vol) -> np.ndarray:
    """M[..., a, b] = (x_a ^ y_b) / (2 vol)."""
    shape = np.broadcast_shapes(*(np.shape(_pairing(x, y)) for x in xs for y in ys), np.shape(vol))
    M = np.empty(shape + (3, 3))
    for a, x in enumerate(xs):
        for b, y in enumerate(ys):
            M[..., a, b] = _pairing(x, y) / (2.0 * vol)
    return M


def _as_matrix(w: FormField, shape) -> np.ndarray:
    W = np.zeros(shape + (4, 4))
    for (i, j), v in w.components.items():
        W[..., i, j] = v
        W[..., j, i] = -np.asarray(v)
    return W


def _flat_dual(W: np.ndarray) -> np.ndarray:
    """Wd^{kl} = (1/2) eps^{klmn} W_mn."""
    D = np.zeros_like(W)
    for (i, j) in _PAIRS:
        k, l = (a for a in range(4) if a not in (i, j))
        sign = _perm_sign((i, j, k, l))
        D[..., k, l] = sign * W[..., i, j]
        D[..., l, k] = -sign * W[..., i, j]
    return D


@dataclass(eq=False)
class GramMatrix:
    Q: np.ndarray
    Qnorm: np.ndarray
    det: np.ndarray
    triple: DefiniteTriple = field(repr=False)

    @functools.cached_property
    def metric(self) -> MetricField:
        """The metric making each form self-dual with volume det(Q)^(1/3) dvol0.

        Built from the cubic expression sum eps_abc W_a Wd_c W_b, which is
        proportional to the metric for any triple spanning a definite subspace.
        """
        t = self.triple
        shape = self.Q.shape[:-2]
        W = [_as_matrix(w, shape) for w in t.omega]
        D = [_flat_dual(w) for w in W]
        h = np.zeros(shape + (4, 4))
        for (a, b, c), s in _LEVI3:
            h += s * (W[a] @ D[c] @ W[b])
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
        h *= np.sign(np.trace(h, axis1=-2, axis2=-1))[..., None, None]
        root = np.sqrt(np.linalg.det(h))
        scale = np.cbrt(self.det) * t.vol0 / root
        g = h * np.sqrt(scale)[..., None, None]
        return MetricField(t.chart, {(i, j): g[..., i, j] for i in range(4) for j in range(i, 4)})

    def self_duality_error(self) -> float:
        """max |*w - w| relative to max |w| over the three forms."""
        worst = 0.0
        for w in self.triple.omega:
            scale = max(w.max_abs(), 1e-300)
            worst = max(worst, (hodge_star(w, self.metric) - w).max_abs() / scale)
        return worst


def gram(t: DefiniteTriple, check_self_dual: bool = False) -> GramMatrix:
    Q = _matrix_of_pairings(t.omega, t.omega, t.vol0)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    minors = [Q[..., 0, 0], Q[..., 0, 0] * Q[..., 1, 1] - Q[..., 0, 1] ** 2, np.linalg.det(Q)]
    for m in minors:
        bad = np.argwhere(~(m > 0))
        if bad.size:
            raise NotDefinite("Gram matrix not positive definite", tuple(int(i) for i in bad[0]))
    det = minors[2]
    Qnorm = Q / np.cbrt(det)[..., None, None]
    gm = GramMatrix(Q, Qnorm, det, t)
    if check_self_dual:
        err = gm.self_duality_error()
        if err > SELF_DUAL_TOL:
            raise AssertionError(f"triple not self-dual for its own metric: {err:.3e}")
    return gm


def hk_residual(t: DefiniteTriple) -> float:
    Qn = gram(t).Qnorm
    return float(np.max(np.linalg.norm(Qn - np.eye(3), axis=(-2, -1))))


# --- the gauge map and its local inverse -------------------------------------------------

def gauge_map(A, Qnorm) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Qnorm, dtype=float)
    AQ = np.matmul(A, Q)
    AQt = np.swapaxes(AQ, -1, -2)
    return TF(AQt + AQ + np.matmul(AQ, np.swapaxes(A, -1, -2)))


def _to5(A: np.ndarray) -> np.ndarray:
    return np.stack([A[..., 0, 0], A[..., 1, 1], A[..., 0, 1], A[..., 0, 2], A[..., 1, 2]], axis=-1)


def _from5(v: np.ndarray) -> np.ndarray:
    a, b, c, d, e = np.moveaxis(v, -1, 0)
    return np.stack([np.stack([a, c, d], -1),
                     np.stack([c, b, e], -1),
                     np.stack([d, e, -a - b], -1)], -2)


_BASIS5 = _from5(np.eye(5))


def _gauge_jacobian(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Exact derivative of the gauge map on trace-free symmetric matrices, as 5x5.

    dG(H) = TF(H M + (H M)^T) with M = Q (Id + A^T); columns are indexed by the basis H.
    """
    M = Q + np.matmul(Q, np.swapaxes(A, -1, -2))
    HM = np.moveaxis(np.tensordot(M, _BASIS5, axes=([-2], [2])), -3, -1)
    cols = _to5(TF(HM + np.swapaxes(HM, -1, -2)))
    return np.swapaxes(cols, -1, -2)


def gauge_inverse(T, Qnorm, rho: float = RHO, guess=None, chunk: int = 1 << 16) -> np.ndarray:
    """Newton solve of gauge_map(A, Qnorm) = T for trace-free symmetric A, vectorised over samples.

    The chart is the image of the radius-``rho`` ball of trace-free symmetric A.
    """
    T = np.asarray(T, dtype=float)
    shape = np.broadcast_shapes(T.shape, np.shape(Qnorm))
    T = np.broadcast_to(T, shape).reshape(-1, 3, 3)
    Q = np.broadcast_to(np.asarray(Qnorm, dtype=float), shape).reshape(-1, 3, 3)
    G = None if guess is None else np.broadcast_to(guess, shape).reshape(-1, 3, 3)
    out = np.empty_like(T)
    for lo in range(0, len(T), chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = _newton(T[sl], Q[sl], rho, None if G is None else G[sl])
    return out.reshape(shape)


def _newton(T, Q, rho, guess):
    if np.any(np.linalg.norm(Q - np.eye(3), axis=(-2, -1)) > QNORM_RADIUS):
        raise OutsideLocalChart(f"normalised Gram matrix farther than {QNORM_RADIUS} from Id")
    T = 0.5 * (T + np.swapaxes(T, -1, -2))
    A = 0.5 * TF(T) if guess is None else np.array(guess)
    for _ in range(NEWTON_MAX_ITER):
        R = gauge_map(A, Q) - T
        if np.max(np.linalg.norm(R, axis=(-2, -1)), initial=0.0) <= NEWTON_TOL:
            if np.any(np.linalg.norm(A, axis=(-2, -1)) > rho):
                raise OutsideLocalChart(f"solution leaves the radius-{rho} ball around 0")
            return A
        step = np.linalg.solve(_gauge_jacobian(A, Q), _to5(R)[..., None])[..., 0]
        A = A - _from5(step)
    raise OutsideLocalChart(f"Newton did not converge in {NEWTON_MAX_ITER} iterations")


# --- deformations dd*(f . omega) -----------------------------------------------------------

def _combine(f: np.ndarray, forms) -> tuple:
    """(f . w)_a = sum_b f_ab w_b."""
    out = []
    for a in range(3):
        acc = None
        for b in range(3):
            term = forms[b] * f[..., a, b]
            acc = term if acc is None else acc + term
        out.append(acc)
    return tuple(out)


def codifferential(w: FormField, g: MetricField, order: int = 2) -> FormField:
    """d* = -*d* on 2-forms in four dimensions."""
    return -hodge_star(exterior_derivative(hodge_star(w, g), order), g)


@dataclass(frozen=True, eq=False)
class TripleDeformation:
    f: np.ndarray
    theta: tuple
    A: np.ndarray
    theta_minus: tuple
    S: np.ndarray

    def recomposition_error(self, omega) -> float:
        plus = _combine(self.A, omega)
        return max((p + m - t).max_abs() for p, m, t in zip(plus, self.theta_minus, self.theta))


def deform(t: DefiniteTriple, f, gm: GramMatrix | None = None, order: int = 2,
           harmonic=None) -> TripleDeformation:
    """theta = dd*(f . omega) (+ C . omega), split into self-dual and anti-self-dual parts."""
    gm = gm or gram(t)
    f = np.asarray(f, dtype=float)
    sigma = _combine(f, t.omega)
    theta = tuple(exterior_derivative(codifferential(s, gm.metric, order), order) for s in sigma)
    if harmonic is not None:
        theta = tuple(th + c for th, c in zip(theta, _combine(np.asarray(harmonic, float), t.omega)))
    # theta^- wedges to zero against every self-dual form
    M = _matrix_of_pairings(theta, t.omega, t.vol0)
    A = np.matmul(M, np.linalg.inv(gm.Q))
    minus = tuple(th - p for th, p in zip(theta, _combine(A, t.omega)))
    S = _matrix_of_pairings(minus, minus, t.vol0 * np.cbrt(gm.det))
    return TripleDeformation(f, theta, A, minus, S)


def nonlinear_part(gm: GramMatrix, dfm: TripleDeformation, guess=None) -> np.ndarray:
    return -gauge_inverse(TF(-gm.Qnorm - dfm.S), gm.Qnorm, guess=guess)


def _check_deformed_definite(gm: GramMatrix, dfm: TripleDeformation) -> None:
    # Gram matrix of omega + theta in dvol_g units: Qn + A Qn + Qn A^T + A Qn A^T + S
    AQ = np.matmul(dfm.A, gm.Qnorm)
    Qd = gm.Qnorm + AQ + np.swapaxes(AQ, -1, -2) + np.matmul(AQ, np.swapaxes(dfm.A, -1, -2)) + dfm.S
    minors = [Qd[..., 0, 0], Qd[..., 0, 0] * Qd[..., 1, 1] - Qd[..., 0, 1] * Qd[..., 1, 0], np.linalg.det(Qd)]
    for m in minors:
        bad = np.argwhere(~(m > 0))
        if bad.size:
            raise NotDefinite("deformed triple not definite", tuple(int(i) for i in bad[0]))


def _evaluate(t, f, gm, order=2, harmonic=None, guess=None):
    dfm = deform(t, f, gm, order, harmonic)
    _check_deformed_definite(gm, dfm)
    N0 = nonlinear_part(gm, dfm, guess)
    return dfm.A + N0, N0


def operator_F(t: DefiniteTriple, f, gm: GramMatrix | None = None, order: int = 2,
               harmonic=None) -> np.ndarray:
    """D(f) + N0(f) as a matrix field; its zeros give hyperkaehler deformations."""
    return _evaluate(t, f, gm or gram(t), order, harmonic)[0]


# --- Picard solver on the torus -------------------------------------------------------------

def _wavenumbers(chart: GridChart):
    ks = []
    for a in range(4):
        n, h = chart.extents[a], chart.spacing[a]
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * 4
        shape[a] = n
        ks.append(k.reshape(shape))
    return ks


def linear_symbol(chart: GridChart, order: int = 2) -> np.ndarray:
    """Fourier symbol of D at the flat triple: half the negated discrete Laplacian."""
    if order != 2:
        raise NotImplementedError("solver symbol is derived for the second-order stencil")
    sym = 0.0
    for k, h in zip(_wavenumbers(chart), chart.spacing):
        sym = sym + (np.sin(k * h) / h) ** 2
    return 0.5 * sym


def _inverse_symbol(symbol: np.ndarray) -> np.ndarray:
    keep = symbol > 1e-12 * np.max(symbol)
    return np.where(keep, 1.0 / np.where(keep, symbol, 1.0), 0.0)


def right_inverse(chart: GridChart, rhs: np.ndarray, symbol: np.ndarray | None = None) -> np.ndarray:
    """Mean-zero inverse of the linearisation, applied entrywise to a matrix field."""
    if symbol is None:
        symbol = linear_symbol(chart)
    rhs = np.broadcast_to(rhs, tuple(chart.extents) + (3, 3))
    hat = np.fft.fftn(rhs, axes=range(4))
    return np.real(np.fft.ifftn(hat * _inverse_symbol(symbol)[..., None, None], axes=range(4)))


def range_residual(chart: GridChart, F: np.ndarray, symbol: np.ndarray | None = None) -> float:
    """sup |F| after removing modes the stencil cannot reach (checkerboards); constants are kept."""
    if symbol is None:
        symbol = linear_symbol(chart)
    reach = _inverse_symbol(symbol) > 0
    reach.flat[0] = True
    hat = np.fft.fftn(np.broadcast_to(F, tuple(chart.extents) + (3, 3)), axes=range(4))
    return float(np.max(np.abs(np.fft.ifftn(hat * reach[..., None, None], axes=range(4)).real)))


def c2_norm(chart: GridChart, f: np.ndarray) -> float:
    """max of value, gradient and Hessian sup norms over all matrix entries."""
    f = np.broadcast_to(f, tuple(chart.extents) + (3, 3))
    best = float(np.max(np.abs(f)))
    for a in range(3):
        for b in range(3):
            u = f[..., a, b]
            grads = [partial(u, i, chart) for i in range(4)]
            best = max(best, max(float(np.max(np.abs(d))) for d in grads))
            for i in range(4):
                for j in range(i, 4):
                    best = max(best, float(np.max(np.abs(partial(grads[i], j, chart)))))
    return best


def hessian_norm(chart: GridChart, f: np.ndarray) -> np.ndarray:
    """Pointwise |grad^2 f| summed over matrix entries, flat metric."""
    f = np.broadcast_to(f, tuple(chart.extents) + (3, 3))
    acc = 0.0
    for a in range(3):
        for b in range(3):
            grads = [partial(f[..., a, b], i, chart) for i in range(4)]
            for i in range(4):
                for j in range(4):
                    acc = acc + partial(grads[i], j, chart) ** 2
    return np.sqrt(acc)


@dataclass
class SolveResult:
    f: np.ndarray
    harmonic: np.ndarray
    triple: DefiniteTriple
    residuals: list
    norms: list
    ratios: list
    bound: float
    hk_residual: float

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual", "norm_f"])
            for i, (r, n) in enumerate(zip(self.residuals, self.norms)):
                w.writerow([i, repr(r), repr(n)])


def solve_hyperkahler(t: DefiniteTriple, tol: float = 1e-9, max_iter: int = 20,
                      max_start_residual: float = 0.2) -> SolveResult:
    """Picard iteration f <- f - P(F(f)) on a fully periodic chart.

    The torus Laplacian misses constants, so the constant part of F(f) is
    absorbed by a parallel correction C . omega, the torus analogue of adding
    harmonic self-dual forms. Convergence is measured on the modes the
    central stencil can reach.
    """
    chart = t.chart
    if len(chart.periodic) != 4 or not all(chart.periodic):
        raise ValueError("solver needs a fully periodic chart")
    start = hk_residual(t)
    if start > max_start_residual:
        raise NoContraction(f"input hk_residual {start:.3e} above {max_start_residual}")
    gm = gram(t)
    symbol = linear_symbol(chart)
    shape = tuple(chart.extents) + (3, 3)
    f = np.zeros(shape)
    C = np.zeros((3, 3))

    warm = None

    def evaluate(f, C):
        nonlocal warm
        try:
            F, N0 = _evaluate(t, f, gm, harmonic=C, guess=warm)
        except (OutsideLocalChart, NotDefinite) as exc:
            raise NoContraction(f"iterate left the local chart: {exc}") from exc
        warm = -N0
        return F

    F = evaluate(f, C)
    residuals = [range_residual(chart, F, symbol)]
    norms = [0.0]
    ratios = []
    first_step = None
    strikes = 0
    while residuals[-1] > tol:
        if len(residuals) > max_iter:
            raise NoContraction(f"no convergence in {max_iter} iterations")
        mean = F.reshape(-1, 3, 3).mean(axis=0)
        step = right_inverse(chart, F - mean, symbol)
        if first_step is None:
            first_step = c2_norm(chart, step)
        f = f - step
        C = C - mean
        F = evaluate(f, C)
        residuals.append(range_residual(chart, F, symbol))
        norms.append(c2_norm(chart, f))
        ratios.append(residuals[-1] / residuals[-2])
        log.info("picard %d residual %.3e norm_f %.3e", len(residuals) - 1, residuals[-1], norms[-1])
        strikes = strikes + 1 if ratios[-1] > 0.5 else 0
        if strikes >= 3:
            raise NoContraction(f"contraction ratio above 1/2 for 3 iterations: {ratios[-3:]}")
    bound = 2.0 * (first_step or 0.0)
    final = t + deform(t, f, gm, harmonic=C).theta
    return SolveResult(f, C, final, residuals, norms, ratios, bound, hk_residual(final))


# --- serialization ----------------------------------------------------------------------------

def write_triple(directory, t: DefiniteTriple) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for a, w in enumerate(t.omega, start=1):
        name = f"omega{a}.hkf"
        write_field(d / name, w)
        names.append(name)
    write_field(d / "vol0.hkf", FormField(t.chart, 0, {(): np.asarray(t.vol0)}))
    manifest = {"kind": "definite_triple", "omega": names, "vol0": "vol0.hkf"}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_triple(directory) -> DefiniteTriple:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    omega = tuple(read_field(d / n) for n in manifest["omega"])
    vol0 = read_field(d / manifest["vol0"])[()]
    return DefiniteTriple(omega[0].chart, omega, vol0)


__all__ = [
    "DefiniteTriple", "GramMatrix", "TripleDeformation", "SolveResult",
    "NotDefinite", "NotClosed", "OutsideLocalChart", "NoContraction",
    "TF", "gram", "hk_residual", "gauge_map", "gauge_inverse", "codifferential",
    "deform", "nonlinear_part", "operator_F", "linear_symbol", "right_inverse",
    "range_residual", "c2_norm", "hessian_norm", "solve_hyperkahler", "write_triple", "read_triple",
]
