"""Structured-grid differential forms, metrics and curvature.

Component arrays are stored with one axis per chart dimension. An axis of
length 1 means the field is constant along it; derivatives along such an axis
vanish identically. This keeps circle-invariant four-dimensional fields at the
cost of a three-dimensional array.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "GridChart",
    "FormField",
    "MetricField",
    "Curvature",
    "DegreeOverflow",
    "DegenerateMetric",
    "NonFiniteField",
    "ChartMismatch",
    "EmptyRegion",
    "partial",
    "exterior_derivative",
    "wedge",
    "hodge_star",
    "riemann_curvature",
    "integrate",
    "interior_mask",
    "write_field",
    "read_field",
]

BOUNDARY_LAYER = 2
PIVOT_TOL = 1e-12


class DegreeOverflow(ValueError):
    pass


class DegenerateMetric(ValueError):
    pass


class NonFiniteField(ValueError):
    pass


class ChartMismatch(ValueError):
    pass


class EmptyRegion(UserWarning):
    pass


@dataclass(frozen=True)
class GridChart:
    """Axis-aligned sample grid; sample ``i`` on axis ``a`` sits at ``origin[a] + i * spacing[a]``."""

    extents: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    periodic: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        ext = tuple(int(n) for n in self.extents)
        dim = len(ext)
        if dim not in (2, 3, 4):
            raise ValueError(f"chart dimension must be 2, 3 or 4, got {dim}")
        per = tuple(bool(p) for p in self.periodic) if self.periodic else (False,) * dim
        sp = tuple(float(h) for h in self.spacing)
        org = tuple(float(o) for o in self.origin)
        if not (len(sp) == len(org) == len(per) == dim):
            raise ValueError("extents, spacing, origin and periodic must have equal length")
        if min(ext) < 4:
            raise ValueError("every extent must be at least 4")
        if min(sp) <= 0.0:
            raise ValueError("every spacing must be positive")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", org)
        object.__setattr__(self, "periodic", per)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @classmethod
    def box(cls, lower, upper, extents, periodic=None) -> "GridChart":
        """Cell-centred grid on ``[lower, upper]`` per axis (midpoint-rule nodes)."""
        lower = np.broadcast_to(np.asarray(lower, float), (len(extents),))
        upper = np.broadcast_to(np.asarray(upper, float), (len(extents),))
        sp = (upper - lower) / np.asarray(extents, float)
        return cls(tuple(extents), tuple(sp), tuple(lower + sp / 2), tuple(periodic or ()))

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.spacing[a] * np.arange(self.extents[a])

    def coordinates(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = self.extents[a]
            out.append(self.axis(a).reshape(shape))
        return out

    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def same_as(self, other: "GridChart") -> bool:
        return self == other


def _check_shape(chart: GridChart, arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape((1,) * chart.dim)
    if arr.ndim != chart.dim:
        raise ValueError(f"{what}: expected {chart.dim} axes, got {arr.ndim}")
    for n, m in zip(arr.shape, chart.extents):
        if n not in (1, m):
            raise ValueError(f"{what}: shape {arr.shape} incompatible with extents {chart.extents}")
    return arr


def _index_sets(dim: int, degree: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(dim), degree))


class FormField:
    """A differential form of fixed degree with one array per increasing index tuple."""

    __slots__ = ("chart", "degree", "components")

    def __init__(self, chart: GridChart, degree: int, components: Mapping[tuple, object] | None = None):
        if not 0 <= degree <= chart.dim:
            raise ValueError(f"degree {degree} outside [0, {chart.dim}]")
        comps = {}
        given = dict(components or {})
        for key in given:
            if tuple(key) not in _index_sets(chart.dim, degree):
                raise KeyError(f"{key} is not an increasing index tuple of length {degree}")
        for idx in _index_sets(chart.dim, degree):
            arr = _check_shape(chart, given.get(idx, 0.0), f"component {idx}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteField(f"component {idx} has non-finite values")
            arr.setflags(write=False)
            comps[idx] = arr
        self.chart = chart
        self.degree = degree
        self.components = comps

    @classmethod
    def zero(cls, chart: GridChart, degree: int) -> "FormField":
        return cls(chart, degree)

    def __getitem__(self, idx) -> np.ndarray:
        return self.components[tuple(idx)]

    def full(self, idx) -> np.ndarray:
        return np.broadcast_to(self.components[tuple(idx)], self.chart.extents)

    def _binary(self, other, op) -> "FormField":
        if isinstance(other, FormField):
            if other.chart != self.chart or other.degree != self.degree:
                raise ChartMismatch("forms must share chart and degree")
            return FormField(self.chart, self.degree,
                             {k: op(v, other.components[k]) for k, v in self.components.items()})
        return FormField(self.chart, self.degree, {k: op(v, other) for k, v in self.components.items()})

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, FormField):
            if scalar.degree != 0:
                raise TypeError("use wedge for products of positive-degree forms")
            scalar = scalar.components[()]
        return FormField(self.chart, self.degree, {k: v * scalar for k, v in self.components.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def max_abs(self, interior: int = 0) -> float:
        """Largest absolute component value, optionally skipping ``interior`` boundary cells."""
        sl = _interior_slices(self.chart, interior)
        best = 0.0
        for v in self.components.values():
            w = v[tuple(s if v.shape[a] > 1 else slice(None) for a, s in enumerate(sl))]
            if w.size:
                best = max(best, float(np.max(np.abs(w))))
        return best


def _interior_slices(chart: GridChart, layer: int) -> tuple[slice, ...]:
    out = []
    for n, per in zip(chart.extents, chart.periodic):
        out.append(slice(None) if per or layer == 0 else slice(layer, n - layer))
    return tuple(out)


def interior_mask(chart: GridChart, layer: int = BOUNDARY_LAYER) -> np.ndarray:
    """Boolean array, false on the ``layer`` outermost cells of non-periodic axes."""
    m = np.zeros(chart.extents, dtype=bool)
    m[_interior_slices(chart, layer)] = True
    return m


def _fd_weights(offsets: Sequence[int]) -> np.ndarray:
    """First-derivative weights at offset 0 for unit spacing, exact on polynomials of degree len-1."""
    offs = np.asarray(offsets, dtype=float)
    n = offs.size
    vander = np.vander(offs, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[1] = 1.0
    return np.linalg.solve(vander, rhs)


def partial(arr: np.ndarray, axis: int, chart: GridChart, order: int = 2) -> np.ndarray:
    """Finite difference along ``axis``: central in the interior, one-sided at open ends.

    ``order`` is an even accuracy order; open axes need ``order + 1`` samples.
    """
    if arr.shape[axis] == 1:
        return np.zeros_like(arr)
    if order < 2 or order % 2:
        raise ValueError("order must be a positive even integer")
    h = chart.spacing[axis]
    half = order // 2
    if order == 2 and not chart.periodic[axis]:
        return np.gradient(arr, h, axis=axis, edge_order=2)
    central = _fd_weights(range(-half, half + 1))
    if chart.periodic[axis]:
        out = np.zeros_like(arr)
        for off, w in zip(range(-half, half + 1), central):
            if off:
                out += w * np.roll(arr, -off, axis)
        return out / h
    n = arr.shape[axis]
    if n < order + 1:
        raise ValueError(f"order {order} differences need at least {order + 1} samples per axis")
    a = np.moveaxis(arr, axis, 0)
    out = np.zeros_like(a)
    for off, w in zip(range(-half, half + 1), central):
        out[half:n - half] += w * a[half + off:n - half + off]
    for i in range(half):
        w = _fd_weights([k - i for k in range(order + 1)])
        out[i] = np.tensordot(w, a[:order + 1], axes=(0, 0))
        out[n - 1 - i] = -np.tensordot(w, a[n - 1::-1][:order + 1], axes=(0, 0))
    return np.moveaxis(out / h, 0, axis)


def _perm_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    if len(set(seq)) < len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _add(acc, term):
    return term if acc is None else acc + term


def exterior_derivative(f: FormField, order: int = 2) -> FormField:
    dim = f.chart.dim
    if f.degree >= dim:
        raise DegreeOverflow(f"cannot differentiate a {f.degree}-form on a {dim}-dimensional chart")
    cache: dict[tuple, np.ndarray] = {}
    out = {}
    for J in _index_sets(dim, f.degree + 1):
        acc = None
        for pos, j in enumerate(J):
            I = J[:pos] + J[pos + 1:]
            key = (I, j)
            if key not in cache:
                cache[key] = partial(f.components[I], j, f.chart, order)
            term = cache[key]
            acc = _add(acc, term if pos % 2 == 0 else -term)
        out[J] = acc
    return FormField(f.chart, f.degree + 1, out)


def wedge(a: FormField, b: FormField) -> FormField:
    if a.chart != b.chart:
        raise ChartMismatch("forms must share a chart")
    deg = a.degree + b.degree
    if deg > a.chart.dim:
        raise DegreeOverflow("wedge product degree exceeds chart dimension")
    out = {J: None for J in _index_sets(a.chart.dim, deg)}
    for I, u in a.components.items():
        for K, v in b.components.items():
            s = _perm_sign(I + K)
            if s == 0:
                continue
            J = tuple(sorted(I + K))
            out[J] = _add(out[J], s * (u * v))
    return FormField(a.chart, deg, {J: (0.0 if v is None else v) for J, v in out.items()})


def _det(m: list[list]) -> np.ndarray:
    """Laplace expansion; dimension is at most four."""
    n = len(m)
    if n == 0:
        return 1.0
    if n == 1:
        return m[0][0]
    if n == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    acc = None
    for c in range(n):
        minor = [row[:c] + row[c + 1:] for row in m[1:]]
        term = m[0][c] * _det(minor)
        acc = _add(acc, term if c % 2 == 0 else -term)
    return acc


class MetricField:
    """Symmetric positive-definite metric; ``g[(i, j)]`` with ``i <= j`` holds each component once."""

    __slots__ = ("chart", "g", "_inv", "_det", "_minors")

    def __init__(self, chart: GridChart, g: Mapping[tuple[int, int], object]):
        comps = {}
        for i in range(chart.dim):
            for j in range(i, chart.dim):
                val = g.get((i, j), g.get((j, i), 0.0))
                arr = _check_shape(chart, val, f"metric component {(i, j)}")
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteField(f"metric component {(i, j)} has non-finite values")
                arr.setflags(write=False)
                comps[(i, j)] = arr
        self.chart = chart
        self.g = comps
        self._inv = None
        self._det = None
        self._minors = {}
        self._check_definite()

    @classmethod
    def flat(cls, chart: GridChart) -> "MetricField":
        return cls(chart, {(i, i): 1.0 for i in range(chart.dim)})

    @classmethod
    def conformal(cls, chart: GridChart, factor) -> "MetricField":
        return cls(chart, {(i, i): factor for i in range(chart.dim)})

    def __getitem__(self, ij) -> np.ndarray:
        i, j = ij
        return self.g[(i, j) if i <= j else (j, i)]

    def matrix(self) -> list[list[np.ndarray]]:
        n = self.chart.dim
        return [[self[i, j] for j in range(n)] for i in range(n)]

    def _check_definite(self):
        m = self.matrix()
        for k in range(1, self.chart.dim + 1):
            minor = _det([row[:k] for row in m[:k]])
            if np.any(np.asarray(minor) <= 0.0):
                raise DegenerateMetric(f"leading principal minor of order {k} is not positive")

    def det(self) -> np.ndarray:
        if self._det is None:
            self._det = np.asarray(_det(self.matrix()), dtype=float)
        return self._det

    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det())

    def inverse(self) -> dict[tuple[int, int], np.ndarray]:
        """Adjugate inverse; raises when the determinant is below the pivot tolerance."""
        if self._inv is None:
            n = self.chart.dim
            m = self.matrix()
            det = self.det()
            diag = functools.reduce(np.multiply, [self[i, i] for i in range(n)])
            if np.any(det <= PIVOT_TOL * diag):
                raise DegenerateMetric("metric determinant below pivot tolerance")
            inv = {}
            for i in range(n):
                for j in range(i, n):
                    minor = [row[:i] + row[i + 1:] for r, row in enumerate(m) if r != j]
                    cof = _det(minor)
                    inv[(i, j)] = (cof if (i + j) % 2 == 0 else -cof) / det
            self._inv = inv
        return self._inv

    def inv(self, i: int, j: int) -> np.ndarray:
        ginv = self.inverse()
        return ginv[(i, j) if i <= j else (j, i)]


def _inverse_minors(g: MetricField, k: int) -> dict:
    """k x k minors of the inverse metric, cached per metric and degree."""
    if k not in g._minors:
        n = g.chart.dim
        ginv = [[g.inv(i, j) for j in range(n)] for i in range(n)]
        sets = _index_sets(n, k)
        g._minors[k] = {(I, K): _det([[ginv[i][kk] for kk in K] for i in I]) for I in sets for K in sets}
    return g._minors[k]


def hodge_star(f: FormField, g: MetricField, orientation: int = 1) -> FormField:
    if f.chart != g.chart:
        raise ChartMismatch("form and metric must share a chart")
    if orientation not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    n, k = f.chart.dim, f.degree
    minors = _inverse_minors(g, k)
    vol = g.sqrt_det() * orientation
    out = {}
    for I in _index_sets(n, k):
        raised = None
        for K, comp in f.components.items():
            raised = _add(raised, minors[I, K] * comp)
        J = tuple(a for a in range(n) if a not in I)
        out[J] = _perm_sign(I + J) * vol * (raised if raised is not None else f.components[()])
    return FormField(f.chart, n - k, out)


@dataclass(frozen=True)
class Curvature:
    """Coordinate curvature; ``riemann[(a, b, c, d)]`` for ``a < b``, ``c < d`` is R_abcd."""

    riemann: dict
    ricci: dict
    scalar: np.ndarray
    norm_sq: np.ndarray

    def R(self, a, b, c, d):
        s = 1
        if a > b:
            a, b, s = b, a, -s
        if c > d:
            c, d, s = d, c, -s
        if a == b or c == d:
            return 0.0
        return s * self.riemann[(a, b, c, d)]


def riemann_curvature(g: MetricField, order: int = 2) -> Curvature:
    """Riemann tensor from centred differences of the Christoffel symbols.

    Sign convention: ``R_abcd = g(R(e_c, e_d) e_b, e_a)``, so the round unit
    sphere has ``R_1212 = +g_11 g_22``. ``norm_sq`` is the curvature operator
    norm on two-forms, a quarter of ``R_abcd R^abcd``. Higher ``order``
    swaps in wider stencils for fields whose curvature must vanish to a tight
    absolute tolerance.
    """
    chart = g.chart
    n = chart.dim
    dg = {(i, j, k): partial(g[i, j], k, chart, order) for i in range(n) for j in range(i, n) for k in range(n)}

    def dgf(i, j, k):
        return dg[(i, j, k) if i <= j else (j, i, k)]

    # first kind: Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    gam1 = {}
    for l in range(n):
        for i in range(n):
            for j in range(i, n):
                gam1[(l, i, j)] = 0.5 * (dgf(j, l, i) + dgf(i, l, j) - dgf(i, j, l))

    def G1(l, i, j):
        return gam1[(l, i, j) if i <= j else (l, j, i)]

    gam2 = {}
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                acc = None
                for l in range(n):
                    acc = _add(acc, g.inv(k, l) * G1(l, i, j))
                gam2[(k, i, j)] = acc

    def G2(k, i, j):
        return gam2[(k, i, j) if i <= j else (k, j, i)]

    dgam = {}

    def dG2(k, i, j, m):
        key = (k, min(i, j), max(i, j), m)
        if key not in dgam:
            dgam[key] = partial(G2(k, i, j), m, chart, order)
        return dgam[key]

    # R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb}
    mixed = {}
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(c + 1, n):
                    acc = dG2(a, d, b, c) - dG2(a, c, b, d)
                    for e in range(n):
                        acc = acc + G2(a, c, e) * G2(e, d, b) - G2(a, d, e) * G2(e, c, b)
                    mixed[(a, b, c, d)] = acc

    riem = {}
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(n):
                for d in range(c + 1, n):
                    acc = None
                    for e in range(n):
                        acc = _add(acc, g[a, e] * mixed[(e, b, c, d)])
                    riem[(a, b, c, d)] = acc
    for key in list(riem):
        a, b, c, d = key
        if (c, d) < (a, b):
            # pair symmetry: average the two second-order estimates
            avg = 0.5 * (riem[key] + riem[(c, d, a, b)])
            riem[key] = avg
            riem[(c, d, a, b)] = avg

    curv = Curvature(riem, {}, np.zeros(1), np.zeros(1))

    ricci = {}
    for b in range(n):
        for d in range(b, n):
            acc = None
            for a in range(n):
                for c in range(n):
                    if a == b or c == d:
                        continue
                    acc = _add(acc, g.inv(a, c) * curv.R(a, b, c, d))
            ricci[(b, d)] = acc if acc is not None else np.zeros((1,) * n)
    scalar = None
    for b in range(n):
        for d in range(n):
            scalar = _add(scalar, g.inv(b, d) * ricci[(min(b, d), max(b, d))])

    # ||Rm||^2 over pairs: sum_{A,B} R_A^B R_B^A with two-form indices A=(a<b)
    pairs = _index_sets(n, 2)
    ginv2 = {}
    for A in pairs:
        for B in pairs:
            ginv2[(A, B)] = g.inv(A[0], B[0]) * g.inv(A[1], B[1]) - g.inv(A[0], B[1]) * g.inv(A[1], B[0])
    up = {}
    for A in pairs:
        for C in pairs:
            acc = None
            for B in pairs:
                acc = _add(acc, ginv2[(A, B)] * riem[B + C])
            up[(A, C)] = acc
    norm = None
    for A in pairs:
        for C in pairs:
            norm = _add(norm, up[(A, C)] * up[(C, A)])
    return Curvature(riem, ricci, np.asarray(scalar), np.asarray(norm))


def integrate(scalar: FormField, g: MetricField | None = None,
              region: Callable[..., np.ndarray] | np.ndarray | None = None) -> float:
    """Midpoint-rule volume integral of a function over the samples selected by ``region``.

    ``region`` is either a boolean array or a predicate called with the
    broadcast coordinate arrays. An empty selection returns 0.0 and emits
    :class:`EmptyRegion`.
    """
    if scalar.degree != 0:
        raise ValueError("integrate expects a 0-form")
    chart = scalar.chart
    if g is not None and g.chart != chart:
        raise ChartMismatch("function and metric must share a chart")
    dens = scalar.components[()]
    if g is not None:
        dens = dens * g.sqrt_det()
    if region is None:
        mask = None
    elif callable(region):
        mask = np.asarray(region(*chart.coordinates()), dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
    dens = np.broadcast_to(dens, chart.extents)
    if mask is not None:
        mask = np.broadcast_to(mask, chart.extents)
        if not mask.any():
            warnings.warn("integration region contains no samples", EmptyRegion, stacklevel=2)
            return 0.0
        total = float(np.sum(dens, where=mask))
    else:
        total = float(np.sum(dens))
    return total * chart.cell_volume()


_MAGIC = "HKFIELD 1"


def write_field(path, f: FormField) -> None:
    """Write a form as an ASCII header followed by raw little-endian float64 blocks."""
    c = f.chart
    comps = list(f.components.items())
    lines = [
        _MAGIC,
        f"dim {c.dim}",
        "extents " + " ".join(str(n) for n in c.extents),
        "spacing " + " ".join(repr(h) for h in c.spacing),
        "origin " + " ".join(repr(o) for o in c.origin),
        "periodic " + " ".join("1" if p else "0" for p in c.periodic),
        f"degree {f.degree}",
        "components " + " ".join(_key(k) for k, _ in comps),
        "shapes " + " ".join("x".join(str(s) for s in v.shape) for _, v in comps),
        "end",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, v in comps:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes(order="C"))


def _key(k: tuple) -> str:
    return "".join(str(i) for i in k) if k else "-"


def read_field(path) -> FormField:
    with open(path, "rb") as fh:
        header = {}
        first = fh.readline().decode("ascii").rstrip("\n")
        if first != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "end":
                break
            if not line:
                raise ValueError(f"{path}: truncated header")
            key, _, rest = line.partition(" ")
            header[key] = rest.split()
        chart = GridChart(
            tuple(int(x) for x in header["extents"]),
            tuple(float(x) for x in header["spacing"]),
            tuple(float(x) for x in header["origin"]),
            tuple(x == "1" for x in header["periodic"]),
        )
        if int(header["dim"][0]) != chart.dim:
            raise ValueError(f"{path}: dim does not match extents")
        degree = int(header["degree"][0])
        comps = {}
        for name, shp in zip(header["components"], header["shapes"]):
            shape = tuple(int(s) for s in shp.split("x"))
            count = math.prod(shape)
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path}: truncated data block for component {name}")
            key = () if name == "-" else tuple(int(ch) for ch in name)
            comps[key] = data.reshape(shape).astype(float)
        return FormField(chart, degree, comps)
