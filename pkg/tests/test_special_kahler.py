from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom.discrete_calculus import GridChart
from hkgeom.monodromy import R_tilde, classify_integral, classify_real, act_on_tau
from hkgeom.special_kahler import (
    ADMISSIBLE_BETA,
    NotConvex,
    NotKahler,
    NotNormalized,
    PeriodSample,
    PunctureTooClose,
    SKModel,
    cayley,
    continuation_error,
    continue_period,
    cubic_differential,
    density,
    hessian_form,
    inverse_cayley,
    model_frame_monodromy,
    monodromy_of_model,
    parse_polynomial,
    period,
    tangent_cone_angle,
    theta_norm_sq,
    verify_curvature_identity,
)


def test_density_examples():
    assert density(SKModel.cone(1), 0.5) == pytest.approx(1.0, abs=1e-15)
    assert density(SKModel.type_I(), math.exp(-1)) == pytest.approx(1 / (2 * math.pi), rel=1e-15)
    assert density(SKModel.cone(Fraction(1, 2)), 1.0) == pytest.approx(0.25, rel=1e-15)


def test_density_equals_im_tau_times_jacobian():
    r = np.linspace(0.05, 0.6, 7)
    phi = np.linspace(-3, 9, 7)
    m1 = SKModel.type_I((0, 0.2j, 0.1))
    assert np.allclose(density(m1, r, phi), np.imag(period(m1, r, phi)), rtol=1e-13)
    m2 = SKModel.type_II((0, 0.3))
    # z = (zeta/2)^(1/2) so |dz/dzeta|^2 = 1/(8|zeta|)
    assert np.allclose(density(m2, r, phi), np.imag(period(m2, r, phi)) / (8 * r), rtol=1e-13)


def test_type_II_pulls_back_to_type_I_under_square_root():
    eta = np.linspace(0.05, 0.7, 9)
    lhs = density(SKModel.type_II(), eta ** 2) * 4 * eta ** 2
    assert np.allclose(lhs, density(SKModel.type_I(), eta), rtol=1e-14)


def test_not_kahler_outside_domain():
    with pytest.raises(NotKahler):
        density(SKModel.type_I(), 1.5)
    with pytest.raises(NotKahler):
        density(SKModel.type_III(Fraction(1, 2), (0, 1)), 1.2)
    with pytest.raises(PunctureTooClose):
        density(SKModel.cone(Fraction(1, 3)), 0.0)


def test_inadmissible_beta_rejected():
    with pytest.raises(ValueError):
        SKModel.cone(Fraction(2, 5))
    with pytest.raises(ValueError):
        SKModel.type_III(1, (0, 1))
    with pytest.raises(ValueError):
        SKModel.type_III(Fraction(1, 2), (1, 1))


def test_monodromy_examples():
    assert monodromy_of_model(SKModel.type_I()).tolist() == [[1, 1], [0, 1]]
    assert monodromy_of_model(SKModel.type_II()).tolist() == [[-1, -1], [0, -1]]
    assert monodromy_of_model(SKModel.type_III(Fraction(1, 4))).tolist() == [[0, -1], [1, 0]]


@pytest.mark.parametrize("beta", ADMISSIBLE_BETA)
def test_cone_monodromy_is_rotation_class(beta):
    m = monodromy_of_model(SKModel.cone(beta))
    cls = classify_real(m)
    if beta in (Fraction(1, 2), Fraction(1, 1)):
        assert cls.kind == "parabolic"
    else:
        assert cls.kind == "elliptic" and float(cls.beta) == pytest.approx(float(beta), abs=1e-12)


@pytest.mark.parametrize("beta", ADMISSIBLE_BETA[:-1])
def test_type_III_integral_class_matches_model_rotation(beta):
    integral = classify_real(R_tilde(beta))
    model = classify_real(model_frame_monodromy(SKModel.type_III(beta, _consistent_F(beta))))
    if beta == Fraction(1, 2):
        assert integral.name == "-Id"
    else:
        assert integral.beta == beta
        assert float(model.beta) == pytest.approx(float(beta), abs=1e-12)


def _consistent_F(beta):
    """Lowest-order F with the vanishing order forced by the monodromy."""
    for order in range(1, 4):
        m = SKModel.type_III(beta, (0,) * order + (1,))
        if m.branch_consistent():
            return m.F
    raise AssertionError(beta)


def test_cubic_differential_examples():
    assert cubic_differential(SKModel.cone(Fraction(1, 3)), 0.4, 1.0) == 0
    assert cubic_differential(SKModel.cone(1), 0.4) == 0
    zeta = 0.3 * np.exp(0.7j)
    assert cubic_differential(SKModel.type_I(), 0.3, 0.7) == pytest.approx(-1j / (2 * math.pi * zeta))


@pytest.mark.parametrize("model", [
    SKModel.type_I((0, 0.3, -0.2j)),
    SKModel.type_II((0, 0.1)),
    SKModel.type_III(Fraction(1, 2), (0, 1, 0.2)),
    SKModel.type_III(Fraction(1, 4), (0, 1)),
    SKModel.type_III(Fraction(1, 6), (0, 0, 1)),
])
def test_cubic_differential_matches_complex_difference(model):
    r, phi, h = 0.31, 0.4, 1e-5
    zeta = r * np.exp(1j * phi)

    def z_of(zz):
        rr, pp = abs(zz), phi + np.angle(zz / zeta)
        if model.kind == "typeI":
            return zz
        return np.sqrt(rr / 2) * np.exp(0.5j * pp)

    dtau = (period(model, abs(zeta + h), phi + np.angle((zeta + h) / zeta)) -
            period(model, abs(zeta - h), phi + np.angle((zeta - h) / zeta))) / (2 * h)
    if model.kind == "typeIII":
        # u = z - i w = zeta^beta and du = (1 - i tau) dz
        b = float(model.beta)
        du = b * r ** (b - 1) * np.exp(1j * (b - 1) * phi)
        dz = du / (1 - 1j * period(model, r, phi))
    else:
        dz = (z_of(zeta + h) - z_of(zeta - h)) / (2 * h)
    expected = dtau / dz
    assert cubic_differential(model, r, phi) == pytest.approx(expected, rel=1e-7)


def test_curvature_identity_type_I():
    out = verify_curvature_identity(SKModel.type_I(), 0.2, 0.5, n_r=200)
    assert out["rel"] <= 0.02


def test_curvature_identity_type_III_half():
    out = verify_curvature_identity(SKModel.type_III(Fraction(1, 2), (0, 1)), 0.2, 0.5, n_r=200)
    assert out["rel"] <= 0.03


@pytest.mark.parametrize("beta", ADMISSIBLE_BETA)
def test_cones_are_flat(beta):
    out = verify_curvature_identity(SKModel.cone(beta), 0.2, 0.5)
    assert out["max_S"] <= 1e-8 and out["max_4theta2"] == 0.0


def test_curvature_convention_s_equals_twice_gauss():
    # Type I, f = 0: K = |tau'|^2 / (2 (Im tau)^3) exactly, with tau' = -i/(2 pi zeta)
    r = 0.3
    im = -math.log(r) / (2 * math.pi)
    K = (1 / (2 * math.pi * r)) ** 2 / (2 * im ** 3)
    assert 4 * theta_norm_sq(SKModel.type_I(), r) == pytest.approx(2 * K, rel=1e-13)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-50, 50), y=st.floats(1e-6, 50))
def test_cayley_round_trip(x, y):
    tau = complex(x, y)
    xi = cayley(tau)
    assert abs(xi) < 1
    assert inverse_cayley(xi) == pytest.approx(tau, rel=1e-9, abs=1e-9)


def test_period_sample_rejects_lower_half_plane():
    with pytest.raises(NotKahler):
        PeriodSample.from_tau(np.array([0.3 - 0.1j]))
    ps = PeriodSample.from_tau(np.array([0.3 + 0.1j, 2j]))
    assert np.all(np.abs(ps.xi) < 1)


@pytest.mark.parametrize("model", [
    SKModel.type_I(),
    SKModel.type_I((0, 0.5, 0.2j)),
    SKModel.type_II((0, 0.3)),
    SKModel.cone(Fraction(1, 3)),
    SKModel.type_III(Fraction(1, 2), (0, 1, 0.3)),
    SKModel.type_III(Fraction(1, 4), (0, 1)),
    SKModel.type_III(Fraction(3, 4), (0, 1, 0.1)),
    SKModel.type_III(Fraction(1, 6), (0, 0, 1)),
    SKModel.type_III(Fraction(1, 3), (0, 1)),
    SKModel.type_III(Fraction(2, 3), (0, 0, 1)),
    SKModel.type_III(Fraction(5, 6), (0, 1)),
])
def test_continuation_lands_on_moebius_image(model):
    assert model.branch_consistent()
    assert continuation_error(model, 0.3) <= 1e-8


def test_type_I_continuation_is_unit_shift():
    start, end = continue_period(SKModel.type_I(), 0.2, 0.0)
    assert end - start == pytest.approx(1.0, abs=1e-10)
    assert act_on_tau(monodromy_of_model(SKModel.type_I()), start) == pytest.approx(end, abs=1e-10)


def test_inconsistent_branch_is_detected():
    assert not SKModel.type_III(Fraction(1, 6), (0, 1)).branch_consistent()


@pytest.mark.parametrize("model,angle", [
    (SKModel.type_I(), 2 * math.pi),
    (SKModel.type_II(), math.pi),
    (SKModel.cone(Fraction(1, 3)), 2 * math.pi / 3),
    (SKModel.type_III(Fraction(1, 4), (0, 1)), math.pi / 2),
    (SKModel.type_III(Fraction(5, 6), (0, 1)), 5 * math.pi / 3),
])
def test_tangent_cone_angle(model, angle):
    assert tangent_cone_angle(model) == pytest.approx(angle, rel=0.02)


def _grid(n=24):
    c = GridChart((n, n), (0.1, 0.1), (-1.2, -1.2))
    return c, c.coordinates()


def test_hessian_form_standard():
    c, (x1, x2) = _grid()
    hf = hessian_form((x1 ** 2 + x2 ** 2) / 2, c)
    assert np.allclose(hf.W, np.eye(2), atol=1e-12)
    assert np.allclose(hf.J, [[0, 1], [-1, 0]], atol=1e-12)


def test_hessian_form_scaled():
    c, (x1, x2) = _grid()
    a = 2.5
    hf = hessian_form((a * x1 ** 2 + x2 ** 2 / a) / 2, c)
    assert np.allclose(hf.W, np.diag([a, 1 / a]), atol=1e-12)
    assert np.allclose(hf.det, 1.0, atol=1e-12)
    JJ = np.einsum("...ij,...jk->...ik", hf.J, hf.J)
    assert np.allclose(JJ, -np.eye(2), atol=1e-12)


def test_hessian_form_rejects_non_normalized_and_non_convex():
    c, (x1, x2) = _grid()
    with pytest.raises(NotNormalized):
        hessian_form((x1 ** 2 + x2 ** 2) / 2 + 0.1 * x1 ** 2 * x2, c)
    with pytest.raises(NotConvex):
        hessian_form(x1 ** 2 * x2, c)


def test_parse_polynomial():
    assert parse_polynomial("z") == (0j, 1 + 0j)
    c = parse_polynomial("0.5*z^2 + 1j*z - 3")
    assert np.allclose(c, [-3, 1j, 0.5])
    with pytest.raises(ValueError):
        parse_polynomial("exp(z)")
    with pytest.raises(ValueError):
        parse_polynomial("__import__('os')")
