from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom import monodromy as mono
from hkgeom.model_ends import (
    FAMILY_KAPPA,
    AmbiguousDimension,
    InadmissibleAngle,
    InadmissibleParameter,
    InsufficientRange,
    Measurement,
    asymptotic_expansion_check,
    build_end,
    classify_end,
    cone_dimension,
    fiber_lattice,
    flatness,
    lattice_monodromy,
    radial_distance,
    torus_lattice,
)
from hkgeom.special_kahler import ADMISSIBLE_BETA

ROUND_TRIP = ([("ALE", {"order": n}) for n in (1, 2, 3)]
              + [("ALF_A", {"k": k, "c": c}) for k, c in ((0, 1.0), (1, 0.5), (3, 2.0))]
              + [("ALF_D", {"k": k}) for k in (2, 3, 5)]
              + [("ALG", {"beta": str(b)}) for b in ADMISSIBLE_BETA]
              + [("ALGstar_I", {"k": k}) for k in (1, 3)]
              + [("ALGstar_Istar", {"k": k}) for k in (1, 2)]
              + [("ALH", {}), ("ALH", {"lengths": (5.0, 6.0, 7.0), "angles": (1.2, 1.4, 1.7)})]
              + [("ALHstar", {"b": b}) for b in (1, 2)])


def r(x, y, z):
    return np.sqrt(x * x + y * y + z * z)


@pytest.mark.parametrize("family,params", ROUND_TRIP, ids=lambda v: str(v))
def test_round_trip_and_volume_exponent(family, params):
    end = build_end(family, params)
    m = end.measure()
    assert abs(m.kappa - FAMILY_KAPPA[family]) <= 0.15
    assert end.label in classify_end(m)
    assert end.hk_residual() <= 1e-10


def test_expected_data():
    assert build_end("ALF_A", {"k": 0, "c": 1}).expected.cone == "R3"
    end = build_end("ALG", {"beta": "1/6"})
    assert end.expected.monodromy == "R~_1/6"
    assert mono.classify_integral(lattice_monodromy(Fraction(1, 6))).name == "R~_1/6"
    assert build_end("ALF_D", {"k": 3}).quotient is not None
    assert build_end("ALGstar_Istar", {"k": 2}).cover.params == {"k": 4}
    assert build_end("ALHstar", {"b": 1}).geometry.potential.source.kind == "linear"


@pytest.mark.parametrize("beta", ADMISSIBLE_BETA)
def test_alg_ends_are_flat_with_invariant_lattice(beta):
    end = build_end("ALG", {"beta": beta})
    assert flatness(end) <= 1e-8
    L = fiber_lattice(beta)
    assert abs(np.linalg.det(L)) == pytest.approx(2 * math.pi)
    cls = mono.classify_integral(lattice_monodromy(beta))
    if beta == 1:
        assert cls.name == "Id"
    elif beta == Fraction(1, 2):
        assert cls.name == "-Id"
    else:
        assert cls.kind == "elliptic" and cls.beta == beta


def test_alh_torus_is_flat():
    end = build_end("ALH", {"lengths": (5.0, 6.0, 7.0), "angles": (1.2, 1.4, 1.7)})
    assert flatness(end) <= 1e-20
    L = torus_lattice((5.0, 6.0, 7.0), (1.2, 1.4, 1.7))
    G = L @ L.T
    assert G[1, 2] == pytest.approx(42 * math.cos(1.2)) and G[2, 2] == pytest.approx(49)


def test_alf_d_is_half_its_cover():
    for k in (2, 3, 4):
        end = build_end("ALF_D", {"k": k})
        _, v = end.volume_profile()
        _, v_cover = end.cover.volume_profile()
        assert np.allclose(v / v_cover, 0.5, rtol=0.02)


def test_alf_volumes_match_radial_integral():
    # independent 1D quadrature of the ball volume for V = 1 + 1/(2r)
    from scipy.integrate import quad
    end = build_end("ALF_A", {"k": 0, "c": 1.0})
    s, vols = end.volume_profile()
    for si, vi in zip(s, vols):
        rho = _invert(lambda x: float(radial_distance(x, 0.5, 1.0)), si)
        exact = 2 * math.pi * quad(lambda x: (1 + 0.5 / x) * 4 * math.pi * x * x, 0, rho)[0]
        assert vi == pytest.approx(exact, rel=0.05)


def _invert(f, target):
    lo, hi = 0.0, target + 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < target else (lo, mid)
    return lo


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 50))
def test_radial_distance_derivative(a, c, x):
    eps = 1e-6 * x
    d = (radial_distance(x + eps, a, c) - radial_distance(x - eps, a, c)) / (2 * eps)
    assert d == pytest.approx(math.sqrt(c + a / x), rel=1e-5)


def test_inadmissible_parameters():
    with pytest.raises(InadmissibleAngle):
        build_end("ALG", {"beta": "2/5"})
    with pytest.raises(InadmissibleAngle):
        build_end("ALG", {})
    with pytest.raises(InadmissibleParameter):
        build_end("ALF_A", {"k": -1})
    with pytest.raises(InadmissibleParameter):
        build_end("ALF_A", {"k": 1, "c": 0})
    with pytest.raises(InadmissibleParameter):
        build_end("ALF_D", {"k": 1})
    with pytest.raises(InadmissibleParameter):
        build_end("ALHstar", {"b": 0})
    with pytest.raises(InadmissibleParameter):
        build_end("ALH", {"angles": (0.1, 0.1, 3.0)})
    with pytest.raises(ValueError):
        build_end("ALX", {})


def test_classify_examples():
    assert classify_end(Measurement(3.02, 0.1, "R3")) == {"ALF_A"}
    assert classify_end(Measurement(3.02, 0.1, "R3/Z2")) == {"ALF_D"}
    assert classify_end(Measurement(2.0, 0.1, "C_1/2", -mono.ID)) == {"ALG(1/2)"}
    assert classify_end(Measurement(2.0, 0.1, None, mono.ID)) == {"ALG(1)"}
    assert classify_end(Measurement(1.33, 0.05, None, None, "Heisenberg")) == {"ALHstar"}
    assert classify_end(Measurement(1.0, 0.1, None, None, "torus")) == {"ALH"}
    assert classify_end(Measurement(1.05, 0.1)) == {"ALH"}
    assert classify_end(Measurement(2.0, 0.1, None, mono.I(3))) == {"ALGstar_I"}
    assert classify_end(Measurement(2.0, 0.1, None, mono.I_star(2))) == {"ALGstar_Istar"}
    assert classify_end(Measurement(3.95, 0.1)) == {"ALE"}
    with pytest.raises(AmbiguousDimension):
        classify_end(Measurement(2.0, 0.1, None, mono.SL2(2, 1, 1, 1)))


def test_straddling_interval_is_ambiguous():
    with pytest.raises(AmbiguousDimension):
        cone_dimension(2.5, 0.6)
    with pytest.raises(AmbiguousDimension):
        cone_dimension(2.5, 0.1)
    assert cone_dimension(1.2, 0.15) == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 4.5), st.floats(0.01, 0.3))
def test_dimension_rows_are_exclusive(kappa, err):
    try:
        d = cone_dimension(kappa, err)
    except AmbiguousDimension:
        return
    rows = {4: (4,), 3: (3,), 2: (2,), 1: (1, 4 / 3)}
    assert any(abs(kappa - k) <= err for k in rows[d])


def test_expansion_examples():
    fit = asymptotic_expansion_check(None, lambda x, y, z: 1 + 3 / (2 * r(x, y, z)))
    assert (fit.c, fit.ell) == pytest.approx((1, 3), abs=1e-12) and fit.remainder_exponent == math.inf
    fit = asymptotic_expansion_check(None, lambda x, y, z: 1 + 1 / (2 * r(x, y, z)) + 0.2 / r(x, y, z) ** 2)
    assert fit.ok and fit.remainder_exponent == pytest.approx(2, abs=1e-6)
    fit = asymptotic_expansion_check(None, lambda x, y, z: 1 + 1 / (2 * r(x, y, z)) + 0.1 * r(x, y, z) ** 0.5)
    assert not fit.ok and fit.remainder_exponent < 2
    # angular dependence averages out; a 1/r^3 tail is faster than required
    fit = asymptotic_expansion_check(None, lambda x, y, z: 1 + 1 / (2 * r(x, y, z)) + z / r(x, y, z) ** 3
                                     + 0.3 / r(x, y, z) ** 3)
    assert fit.ok and fit.remainder_exponent == pytest.approx(3, abs=1e-6)
    fit = asymptotic_expansion_check(build_end("ALF_A", {"k": 2, "c": 1.5}))
    assert (fit.c, fit.ell) == pytest.approx((1.5, 3.0), abs=1e-10) and fit.ok


def test_expansion_needs_a_decade():
    with pytest.raises(InsufficientRange):
        asymptotic_expansion_check(None, lambda x, y, z: 1 + 0 * x, radii=np.geomspace(10, 50, 8))
    with pytest.raises(ValueError):
        asymptotic_expansion_check(build_end("ALE", {"order": 1}))
