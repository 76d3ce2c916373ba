from __future__ import annotations

import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom.monodromy import (
    ELLIPTIC_INTEGRAL,
    NOT_FOUND,
    SL2,
    I,
    I_star,
    NotUnimodular,
    R_tilde,
    act_on_tau,
    all_small,
    brute_force_conjugate,
    classify_integral,
    classify_real,
    conjugacy_distance_to_identity,
    parse_matrix,
    rotation,
)
from hkgeom.monodromy import _candidates


def test_identity_is_parabolic_identity():
    c = classify_real([[1, 0], [0, 1]])
    assert c.kind == "parabolic" and c.name == "Id"


def test_rotation_sixth_is_elliptic_one_sixth():
    c = classify_real(rotation(1 / 6))
    assert c.kind == "elliptic"
    assert c.beta == pytest.approx(1 / 6, abs=1e-12)


def test_rotation_orientation_distinguishes_beta_from_complement():
    for beta in (0.1, 0.3, 0.45, 0.55, 0.8, 0.95):
        assert classify_real(rotation(beta)).beta == pytest.approx(beta, abs=1e-12)


def test_hyperbolic_eigenvalue():
    c = classify_real([[2, 1], [1, 1]])
    assert c.kind == "hyperbolic"
    assert c.trace == 3
    assert c.r == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-15)


def test_not_unimodular():
    with pytest.raises(NotUnimodular):
        classify_real([[1.0, 0.5], [0.0, 1.1]])
    with pytest.raises(NotUnimodular):
        classify_integral([[2, 0], [0, 1]])
    with pytest.raises(NotUnimodular):
        SL2(1, 1, 1, 1)


def test_near_parabolic_float_is_ambiguous():
    eps = 1e-11
    m = [[1.0 + eps, 0.3], [0.0, 1.0 / (1.0 + eps)]]
    assert classify_real(m).kind == "ambiguous"


def test_parabolic_real_canonical_forms():
    assert classify_real([[1, 7], [0, 1]]).name == "I_1"
    assert classify_real([[1, 0], [3, 1]]).name == "I_1^-1"
    assert classify_real([[-1, -2], [0, -1]]).name == "I_1*"
    assert classify_real([[-1, 2], [0, -1]]).name == "(I_1*)^-1"
    assert classify_real([[-1, 0], [0, -1]]).name == "-Id"


def test_integral_examples():
    c = classify_integral([[0, -1], [1, 0]])
    assert c.canonical == R_tilde(Fraction(1, 4)) and c.witness == SL2(1, 0, 0, 1)
    c = classify_integral([[1, 5], [0, 1]])
    assert c.canonical == I(5) and c.n == 5
    c = classify_integral([[1, -1], [1, 0]])
    assert c.canonical == R_tilde(Fraction(1, 6))


def test_elliptic_table_matches_rotation_traces():
    for beta, m in ELLIPTIC_INTEGRAL.items():
        assert float(m.trace) == pytest.approx(2 * math.cos(2 * math.pi * beta), abs=1e-15)
        assert classify_real(m).beta == beta
        assert classify_integral(m).witness == SL2(1, 0, 0, 1)


def test_act_on_tau_examples():
    assert act_on_tau(SL2(1, 0, 0, 1), 1j) == 1j
    assert act_on_tau(I(1), 0.3 + 2j) == pytest.approx(1.3 + 2j)
    assert act_on_tau(rotation(0.25), 1j) == pytest.approx(1j, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(idx=st.integers(0, 10_000), x=st.floats(-5, 5), y=st.floats(1e-3, 5))
def test_act_on_tau_preserves_upper_half_plane(idx, x, y):
    P = _candidates(20)
    row = P[idx % len(P)]
    assert act_on_tau(SL2(*map(int, row)), complex(x, y)).imag > 0


def test_act_on_tau_is_a_left_action():
    A, B = SL2(2, 1, 1, 1), SL2(1, -1, 1, 0)
    tau = 0.2 + 0.7j
    assert act_on_tau(A @ B, tau) == pytest.approx(act_on_tau(A, act_on_tau(B, tau)))


def test_brute_force_examples():
    assert brute_force_conjugate(SL2(1, 0, 0, 1), SL2(1, 0, 0, 1), 1) == SL2(1, 0, 0, 1)
    P = SL2(1, 0, 1, 1)
    B = I(1).conj(P)
    found = brute_force_conjugate(I(1), B, 10)
    assert found is not NOT_FOUND and I(1).conj(found) == B
    assert brute_force_conjugate(I(1), I(2), 10) is NOT_FOUND


def test_brute_force_witness_is_minimal():
    P = SL2(3, 2, 1, 1)
    B = I(1).conj(P)
    found = brute_force_conjugate(I(1), B, 10)
    assert max(abs(v) for v in found.entries) <= 3


def test_oracle_agreement_exhaustive():
    mismatches = []
    for A in all_small(5):
        c = classify_integral(A)
        if c.kind == "hyperbolic":
            continue
        if A.conj(c.witness) != c.canonical:
            mismatches.append(A)
        if brute_force_conjugate(A, c.canonical, 40) is NOT_FOUND:
            mismatches.append(A)
        if c.kind == "elliptic":
            assert c.canonical in ELLIPTIC_INTEGRAL.values()
    assert mismatches == []


def test_elliptic_siblings_are_not_integrally_conjugate():
    pairs = [(Fraction(1, 4), Fraction(3, 4)), (Fraction(1, 6), Fraction(5, 6)), (Fraction(1, 3), Fraction(2, 3))]
    for a, b in pairs:
        assert brute_force_conjugate(R_tilde(a), R_tilde(b), 20) is NOT_FOUND


def test_classification_is_a_class_function():
    rng = np.random.default_rng(11)
    pool = _candidates(20)
    base = [SL2(0, -1, 1, -1), I(3), I_star(-2), SL2(2, 1, 1, 1), SL2(1, 1, 0, 1)]
    for k in range(1000):
        P = SL2(*map(int, pool[rng.integers(len(pool))]))
        A = base[k % len(base)]
        B = A.conj(P)
        ca, cb = classify_integral(A), classify_integral(B)
        assert (ca.kind, ca.name, ca.canonical) == (cb.kind, cb.name, cb.canonical)
        ra, rb = classify_real(A), classify_real(B)
        assert (ra.kind, ra.name) == (rb.kind, rb.name)
        assert B.trace == A.trace


def test_jumping_monodromy_near_identity_classes():
    allowed = {"Id", "I_1", "I_1^-1"}
    for A in all_small(5):
        if conjugacy_distance_to_identity(A) < 0.1:
            assert classify_real(A).name in allowed


def test_conjugacy_distance_is_realised_by_scaling():
    A = I(5)
    lam = 1e-3
    D = np.diag([lam, 1 / lam])
    scaled = D @ A.as_float() @ np.linalg.inv(D)
    assert np.linalg.norm(scaled - np.eye(2)) < 1e-4
    assert conjugacy_distance_to_identity(A) == 0.0


def test_parse_matrix():
    assert parse_matrix("1,1;0,1") == [[1, 1], [0, 1]]
    assert parse_matrix("1/2, 0; 0, 2") == [[Fraction(1, 2), 0], [0, 2]]
    with pytest.raises(ValueError):
        parse_matrix("1,2,3")


def test_fixed_point_of_rotation_class():
    A = R_tilde(Fraction(1, 6))
    tau = cmath.exp(1j * math.pi / 3)
    assert act_on_tau(A, tau) == pytest.approx(tau)
