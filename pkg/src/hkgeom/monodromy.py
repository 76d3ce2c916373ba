"""Conjugacy classification of SL(2,R) and SL(2,Z) monodromy matrices.

Matrices are written row-wise as ``[[a, b], [c, d]]``. The same array acts on
periods by ordinary Moebius transformation, ``tau -> (a tau + b) / (c tau + d)``;
for the Type I model this is the shift ``tau -> tau + 1`` under ``[[1, 1], [0, 1]]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SL2",
    "MonodromyClass",
    "NotUnimodular",
    "PoleHit",
    "NotFound",
    "NOT_FOUND",
    "ELLIPTIC_INTEGRAL",
    "I",
    "I_star",
    "R_tilde",
    "rotation",
    "classify_real",
    "classify_integral",
    "act_on_tau",
    "brute_force_conjugate",
    "conjugacy_distance_to_identity",
    "parse_matrix",
]

REAL_DET_TOL = 1e-12
TRACE_BAND = 1e-9


class NotUnimodular(ValueError):
    pass


class PoleHit(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class SL2:
    """Exact unimodular 2x2 matrix with rational entries."""

    a: Fraction
    b: Fraction
    c: Fraction
    d: Fraction

    def __init__(self, a, b, c, d):
        vals = [Fraction(v) for v in (a, b, c, d)]
        if vals[0] * vals[3] - vals[1] * vals[2] != 1:
            raise NotUnimodular(f"determinant of {vals} is not 1")
        for name, v in zip("abcd", vals):
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, rows) -> "SL2":
        (a, b), (c, d) = rows
        return cls(a, b, c, d)

    @property
    def is_integral(self) -> bool:
        return all(v.denominator == 1 for v in self.entries)

    @property
    def entries(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        return (self.a, self.b, self.c, self.d)

    @property
    def trace(self) -> Fraction:
        return self.a + self.d

    def __matmul__(self, o: "SL2") -> "SL2":
        return SL2(self.a * o.a + self.b * o.c, self.a * o.b + self.b * o.d,
                   self.c * o.a + self.d * o.c, self.c * o.b + self.d * o.d)

    def inv(self) -> "SL2":
        return SL2(self.d, -self.b, -self.c, self.a)

    def __neg__(self) -> "SL2":
        return SL2(-self.a, -self.b, -self.c, -self.d)

    def conj(self, p: "SL2") -> "SL2":
        """``p @ self @ p^-1``."""
        return p @ self @ p.inv()

    def rows(self) -> list[list]:
        return [[self.a, self.b], [self.c, self.d]]

    def as_ints(self) -> tuple[int, int, int, int]:
        if not self.is_integral:
            raise ValueError("matrix has non-integral entries")
        return tuple(int(v) for v in self.entries)

    def as_float(self) -> np.ndarray:
        return np.array([[float(self.a), float(self.b)], [float(self.c), float(self.d)]])

    def __str__(self) -> str:
        return f"{self.a},{self.b};{self.c},{self.d}"


ID = SL2(1, 0, 0, 1)


def I(n: int) -> SL2:
    return SL2(1, n, 0, 1)


def I_star(n: int) -> SL2:
    return SL2(-1, -n, 0, -1)


ELLIPTIC_INTEGRAL = {
    Fraction(1, 4): SL2(0, -1, 1, 0),
    Fraction(3, 4): SL2(0, 1, -1, 0),
    Fraction(1, 6): SL2(1, -1, 1, 0),
    Fraction(1, 3): SL2(0, -1, 1, -1),
    Fraction(2, 3): SL2(-1, 1, -1, 0),
    Fraction(5, 6): SL2(0, 1, -1, 1),
}


def R_tilde(beta) -> SL2:
    beta = Fraction(beta)
    if beta == 1:
        return ID
    if beta == Fraction(1, 2):
        return -ID
    return ELLIPTIC_INTEGRAL[beta]


def rotation(beta: float) -> np.ndarray:
    """Counterclockwise rotation by ``2 pi beta``."""
    c, s = math.cos(2 * math.pi * beta), math.sin(2 * math.pi * beta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class MonodromyClass:
    kind: str
    name: str
    trace: float | Fraction
    beta: Fraction | float | None = None
    r: float | None = None
    n: int | None = None
    canonical: SL2 | None = None
    witness: SL2 | None = None

    def record(self) -> dict:
        out = {"class": self.kind, "name": self.name, "params": {}}
        if self.beta is not None:
            out["params"]["beta"] = str(self.beta)
        if self.r is not None:
            out["params"]["r"] = self.r
        if self.n is not None:
            out["params"]["n"] = self.n
        out["canonical"] = str(self.canonical) if self.canonical is not None else None
        out["conjugator"] = str(self.witness) if self.witness is not None else None
        return out


class NotFound:
    def __repr__(self) -> str:
        return "NOT_FOUND"

    def __bool__(self) -> bool:
        return False


NOT_FOUND = NotFound()


def _exact_or_none(m) -> SL2 | None:
    if isinstance(m, SL2):
        return m
    arr = np.asarray(m, dtype=object).reshape(2, 2)
    vals = list(arr.ravel())
    if all(isinstance(v, (int, Fraction, np.integer)) for v in vals):
        return SL2(*vals)
    fl = np.asarray(vals, dtype=float)
    if np.all(fl == np.round(fl)) and np.all(np.abs(fl) < 2 ** 52):
        ints = [int(v) for v in fl]
        if ints[0] * ints[3] - ints[1] * ints[2] == 1:
            return SL2(*ints)
    return None


def _elliptic_beta(trace: float, skew: float):
    exact = {0: Fraction(1, 4), 1: Fraction(1, 6), -1: Fraction(1, 3)}
    if isinstance(trace, Fraction) and trace in exact:
        base = exact[int(trace)]
    else:
        base = math.acos(float(trace) / 2.0) / (2 * math.pi)
    return base if skew > 0 else 1 - base


def classify_real(m) -> MonodromyClass:
    """Classify a real unimodular matrix up to SL(2,R) conjugation.

    Exact input (ints, Fractions, or integral floats) is decided exactly. Other
    float input within ``TRACE_BAND`` of ``|tr| = 2`` is returned as ``ambiguous``.
    """
    ex = _exact_or_none(m)
    if ex is not None:
        a, b, c, d = ex.entries
        tr = ex.trace
        exact = True
    else:
        arr = np.asarray(m, dtype=float).reshape(2, 2)
        a, b, c, d = arr.ravel()
        if abs(a * d - b * c - 1.0) > REAL_DET_TOL:
            raise NotUnimodular(f"determinant {a * d - b * c!r} differs from 1")
        tr = a + d
        exact = False
    if not exact and abs(abs(tr) - 2.0) <= TRACE_BAND:
        return MonodromyClass("ambiguous", "ambiguous", tr)
    if abs(tr) < 2:
        beta = _elliptic_beta(tr, float(c - b))
        return MonodromyClass("elliptic", f"R_{beta}", tr, beta=beta)
    if abs(tr) > 2:
        t = float(tr)
        r = (t + math.copysign(math.sqrt(t * t - 4.0), t)) / 2.0
        return MonodromyClass("hyperbolic", f"D_{r:.12g}", tr, r=r)
    sign = 1 if tr > 0 else -1
    nb, nc = sign * b, sign * c
    if nb == 0 and nc == 0 and sign * a == 1:
        return MonodromyClass("parabolic", "Id" if sign > 0 else "-Id", tr, canonical=ID if sign > 0 else -ID)
    up = (nb - nc) > 0
    if sign > 0:
        canon, name = (I(1), "I_1") if up else (I(-1), "I_1^-1")
    else:
        canon, name = (I_star(1), "I_1*") if up else (I_star(-1), "(I_1*)^-1")
    return MonodromyClass("parabolic", name, tr, n=1 if up else -1, canonical=canon)


def _ext_gcd(x: int, y: int) -> tuple[int, int, int]:
    if y == 0:
        return (abs(x), (1 if x >= 0 else -1), 0)
    g, s, t = _ext_gcd(y, x % y)
    return g, t, s - (x // y) * t


def _unipotent_data(m: SL2) -> tuple[int, SL2]:
    """For ``m = Id + N`` with ``N != 0`` nilpotent, return ``n`` and ``P`` with ``P m P^-1 = I(n)``."""
    a, b, c, d = m.as_ints()
    p, q, r = a - 1, b, c
    n = math.gcd(q, r) * (1 if q - r > 0 else -1)
    v1 = math.isqrt(q // n)
    v2 = math.isqrt(-r // n)
    if -n * v1 * v2 != p:
        v2 = -v2
    _, x, y = _ext_gcd(v1, v2)
    P = SL2(x, y, -v2, v1)
    return n, P


def _reduce_elliptic(m: SL2) -> tuple[SL2, SL2]:
    """Conjugate an integral elliptic matrix to small entries; returns ``(P, P m P^-1)``."""
    S = SL2(0, -1, 1, 0)
    P = ID
    cur = m
    while True:
        a, b, c, d = cur.as_ints()
        k = -round(Fraction(a - d, 2 * c))
        if k:
            T = SL2(1, k, 0, 1)
            cur, P = cur.conj(T), T @ P
            a, b, c, d = cur.as_ints()
        if abs(b) < abs(c):
            cur, P = cur.conj(S), S @ P
            continue
        return P, cur


def classify_integral(m) -> MonodromyClass:
    """Classify up to SL(2,Z) conjugation with canonical form and conjugator ``P``, ``P m P^-1 = canonical``."""
    ex = m if isinstance(m, SL2) else _exact_or_none(m)
    if ex is None:
        arr = np.asarray(m, dtype=float).reshape(2, 2)
        raise NotUnimodular(f"{arr.tolist()} is not an integral unimodular matrix")
    if not ex.is_integral:
        raise NotUnimodular(f"{ex} has non-integral entries")
    tr = ex.trace
    if abs(tr) > 2:
        real = classify_real(ex)
        return MonodromyClass("hyperbolic", real.name, tr, r=real.r)
    if abs(tr) == 2:
        sign = 1 if tr > 0 else -1
        u = ex if sign > 0 else -ex
        if u == ID:
            canon = ID if sign > 0 else -ID
            return MonodromyClass("parabolic", "Id" if sign > 0 else "-Id", tr, canonical=canon, witness=ID)
        n, P = _unipotent_data(u)
        canon = I(n) if sign > 0 else I_star(n)
        name = f"I_{n}" if sign > 0 else f"I_{n}*"
        return MonodromyClass("parabolic", name, tr, n=n, canonical=canon, witness=P)
    beta = _elliptic_beta(tr, float(ex.c - ex.b))
    target = ELLIPTIC_INTEGRAL[beta]
    P, small = _reduce_elliptic(ex)
    Q = brute_force_conjugate(small, target, 3)
    if Q is NOT_FOUND:
        raise AssertionError(f"reduction of {ex} did not reach {target}")
    return MonodromyClass("elliptic", f"R~_{beta}", tr, beta=beta, canonical=target, witness=Q @ P)


def act_on_tau(m, tau: complex) -> complex:
    """Moebius action of the row-wise matrix on a period in the upper half-plane."""
    if isinstance(m, SL2):
        a, b, c, d = (float(v) for v in m.entries)
    else:
        a, b, c, d = np.asarray(m, dtype=float).ravel()
    tau = complex(tau)
    if tau.imag <= 0:
        raise ValueError("tau must lie in the upper half-plane")
    den = c * tau + d
    if den == 0:
        raise PoleHit("denominator vanishes")
    return (a * tau + b) / den


@functools.lru_cache(maxsize=8)
def _candidates(bound: int) -> np.ndarray:
    """All integral unimodular matrices with entries in ``[-bound, bound]``, in spiral order."""
    rng = np.arange(-bound, bound + 1, dtype=np.int64)
    p, q, r = np.meshgrid(rng, rng, rng, indexing="ij")
    p, q, r = p.ravel(), q.ravel(), r.ravel()
    num = 1 + q * r
    nz = p != 0
    s = np.zeros_like(p)
    ok = np.zeros(p.shape, bool)
    s[nz] = num[nz] // p[nz]
    ok[nz] = (num[nz] % p[nz] == 0) & (np.abs(s[nz]) <= bound)
    rows = [np.stack([p[ok], q[ok], r[ok], s[ok]], axis=1)]
    zq = (~nz) & (q * r == -1)
    for qq, rr in zip(q[zq], r[zq]):
        rows.append(np.array([[0, qq, rr, ss] for ss in rng], dtype=np.int64))
    allm = np.concatenate(rows)
    mx = np.abs(allm).max(axis=1)
    l1 = np.abs(allm).sum(axis=1)
    # smallest max entry, then smallest l1 size, then lexicographically largest
    order = np.lexsort((-allm[:, 3], -allm[:, 2], -allm[:, 1], -allm[:, 0], l1, mx))
    return allm[order]


def brute_force_conjugate(A, B, bound: int):
    """First ``P`` in spiral order with ``P A P^-1 = B`` and entries bounded by ``bound``, else ``NOT_FOUND``."""
    if bound < 1:
        raise ValueError("bound must be at least 1")
    A = A if isinstance(A, SL2) else SL2.of(A)
    B = B if isinstance(B, SL2) else SL2.of(B)
    a1, b1, c1, d1 = A.as_ints()
    a2, b2, c2, d2 = B.as_ints()
    if a1 + d1 != a2 + d2:
        return NOT_FOUND
    P = _candidates(bound)
    p, q, r, s = P.T
    # P A == B P, entrywise
    ok = (p * a1 + q * c1 == a2 * p + b2 * r)
    ok &= (p * b1 + q * d1 == a2 * q + b2 * s)
    ok &= (r * a1 + s * c1 == c2 * p + d2 * r)
    ok &= (r * b1 + s * d1 == c2 * q + d2 * s)
    hit = np.flatnonzero(ok)
    if hit.size == 0:
        return NOT_FOUND
    return SL2(*(int(v) for v in P[hit[0]]))


def conjugacy_distance_to_identity(m) -> float:
    """Infimum of the Frobenius distance to Id over the SL(2,R) conjugacy class."""
    cls = classify_real(m)
    if cls.kind == "parabolic":
        return 0.0 if cls.name in ("Id", "I_1", "I_1^-1") else 2.0 * math.sqrt(2.0)
    if cls.kind == "elliptic":
        return 2.0 * math.sqrt(2.0) * abs(math.sin(math.pi * float(cls.beta)))
    if cls.kind == "hyperbolic":
        r = cls.r
        return math.hypot(r - 1.0, 1.0 / r - 1.0)
    return float("nan")


def parse_matrix(text: str) -> list[list[Fraction]]:
    """Parse ``"a,b;c,d"`` with integer, fractional (``p/q``) or decimal entries."""
    rows = [row.split(",") for row in text.replace(" ", "").split(";")]
    if len(rows) != 2 or any(len(r) != 2 for r in rows):
        raise ValueError(f"expected 'a,b;c,d', got {text!r}")
    return [[Fraction(v) for v in row] for row in rows]


def all_small(bound: int) -> Iterable[SL2]:
    """Every integral unimodular matrix with entries in ``[-bound, bound]``."""
    for row in _candidates(bound):
        yield SL2(*(int(v) for v in row))
