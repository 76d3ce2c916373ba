from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom.cone_poisson import (
    InsufficientRange,
    RadialGrid,
    ResonantWeight,
    TailDivergence,
    WeightedNorm,
    build_spectrum,
    exponents,
    solve,
    solve_d1,
    truncation_bound,
    weighted_norm,
)


def test_sphere_spectrum_roots():
    s = build_spectrum(3, "sphere", 3)
    assert (s.modes[0].mu_plus, s.modes[0].mu_minus) == (0.0, -1.0)
    m1 = s.modes[1]
    assert m1.lam == 2 and m1.multiplicity == 3
    assert (m1.mu_plus, m1.mu_minus) == pytest.approx((1.0, -2.0), abs=1e-15)
    assert all(m.mu_plus >= 1 and m.mu_minus <= -2 for m in s.modes[1:])


def test_circle_and_projective_spectra():
    c = build_spectrum(2, "circle", 3, beta=1.0)
    assert c.modes[1].lam == 1 and c.modes[1].multiplicity == 2
    assert (c.modes[1].mu_plus, c.modes[1].mu_minus) == (1.0, -1.0)
    assert build_spectrum(2, "circle", 3, beta=0.5).modes[2].lam == 16
    p = build_spectrum(3, "projective_sphere", 3)
    assert [m.lam for m in p.modes] == [0, 6, 20]
    assert [m.multiplicity for m in p.modes] == [1, 5, 9]


@pytest.mark.parametrize("cross,d,beta", [("circle", 2, 0.75), ("sphere", 3, 1), ("projective_sphere", 3, 1)])
def test_eigenfunctions_orthonormal(cross, d, beta):
    s = build_spectrum(d, cross, 4, beta=beta)
    nodes, w = s.quadrature(24)
    phi = s.eigenfunctions(nodes)
    assert np.allclose((phi * w) @ phi.T, np.eye(phi.shape[0]), atol=1e-12)
    assert w.sum() == pytest.approx(s.area)


@given(st.floats(0.0, 50.0), st.sampled_from([2, 3]))
def test_exponents_solve_indicial_equation(lam, d):
    for mu in exponents(d, lam):
        assert mu * mu + (d - 2) * mu - lam == pytest.approx(0.0, abs=1e-9 * (1 + lam))


def test_invalid_spectrum_requests():
    with pytest.raises(ValueError):
        build_spectrum(3, "sphere", 0)
    with pytest.raises(ValueError):
        build_spectrum(2, "sphere", 2)


def test_zero_source_gives_zero():
    s = build_spectrum(3, "sphere", 3)
    sol = solve(s, {(0, 0): lambda r: 0 * r, (1, 2): lambda r: 0 * r}, 0.4)
    assert all(np.all(c == 0) for c in sol.coeffs.values())


def test_radial_power_source_matches_closed_form():
    s = build_spectrum(3, "sphere", 2)
    sol = solve(s, {(0, 0): lambda r: r ** -0.5}, 0.4, R=1.0, r_max=100.0, n=2000)
    r = sol.r
    # particular r^{3/2}/3.75 plus a + b/r fixed by u(1) = u'(1) = 0
    exact = r ** 1.5 / 3.75 - 1 / 3.75 - 0.4 + 0.4 / r
    assert np.max(np.abs(sol.coeffs[(0, 0)] - exact)) < 1e-10
    assert sol.residual((0, 0)) <= 1e-8
    assert sol.growth_exponent() <= 2 - 0.4 + 0.05


def test_two_dimensional_mode_decays_onto_particular_solution():
    s = build_spectrum(2, "circle", 3, beta=0.5)
    sol = solve(s, {(1, 0): lambda r: r ** -0.4}, 0.4)
    r, u = sol.r, sol.coeffs[(1, 0)]
    assert sol.residual((1, 0)) <= 1e-8
    # lam = 4: growing kernel r^2 exceeds r^1.6, so only r^1.6/(1.6^2 - 4) + a r^-2 remains
    hom = (u - r ** 1.6 / (1.6 ** 2 - 4)) * r ** 2
    assert np.ptp(hom) < 1e-8 * np.max(np.abs(u) * r ** 2)
    assert sol.growth_exponent() <= 1.6 + 0.05


@pytest.mark.parametrize("d,cross,beta", [(3, "sphere", 1.0), (3, "projective_sphere", 1.0), (2, "circle", 1.0),
                                          (2, "circle", 0.5)])
def test_residual_and_growth_across_modes(d, cross, beta):
    s = build_spectrum(d, cross, 4, beta=beta)
    delta = 0.3
    v = {(m.j, 0): (lambda r, j=m.j: r ** -delta / (1 + j)) for m in s.modes}
    sol = solve(s, v, delta, r_max=200.0, n=3000)
    assert sol.max_residual() <= 1e-8
    assert sol.growth_exponent() <= 2 - delta + 0.05
    assert math.isfinite(sol.weighted_constant())
    wiggly = {(m.j, 0): (lambda r, j=m.j: r ** -delta * np.cos(j * np.log(r))) for m in s.modes}
    assert solve(s, wiggly, delta, r_max=200.0, n=3000).max_residual() <= 1e-8


def test_resonant_weight_rejected():
    s = build_spectrum(2, "circle", 3, beta=2 / 3)
    assert s.gamma_growth == pytest.approx((0.5,))
    with pytest.raises(ResonantWeight):
        solve(s, {(1, 0): lambda r: r ** -0.5}, 0.5 + 1e-10)
    with pytest.raises(ValueError):
        solve(s, {}, 1.2)


def test_tail_divergence():
    s = build_spectrum(3, "sphere", 3)
    with pytest.raises(TailDivergence):
        solve(s, {(2, 0): lambda r: r ** 3.0}, 0.4)


def test_gridded_input_matches_mode_input():
    s = build_spectrum(3, "sphere", 3)
    grid = RadialGrid(1.0, 50.0, 1200)
    nodes, _ = s.quadrature(10)
    theta, _phi = nodes
    v = np.outer(grid.r ** -0.5, np.cos(theta))
    sol = solve(s, v, 0.4, r_max=50.0, n=1200, angular_nodes=10)
    # cos(theta) = sqrt(4 pi / 3) Y_1^0, the middle component of the l = 1 block
    ref = solve(s, {(1, 1): lambda r: math.sqrt(4 * math.pi / 3) * r ** -0.5}, 0.4, r_max=50.0, n=1200)
    assert np.allclose(sol.reconstruct(nodes), ref.reconstruct(nodes), atol=1e-9, rtol=0)
    assert max(np.max(np.abs(c)) for k, c in sol.coeffs.items() if k != (1, 1)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 0.9))
def test_linearity(a, b, p):
    s = build_spectrum(2, "circle", 3)
    delta = 0.35
    f1 = lambda r: r ** -delta
    f2 = lambda r: r ** -delta * np.sin(p * np.log(r))
    kw = dict(r_max=50.0, n=400)
    u1 = solve(s, {(1, 0): f1, (0, 0): f2}, delta, **kw)
    u2 = solve(s, {(1, 0): f2, (0, 0): f1}, delta, **kw)
    u = solve(s, {(1, 0): lambda r: a * f1(r) + b * f2(r), (0, 0): lambda r: a * f2(r) + b * f1(r)}, delta, **kw)
    for k in u.coeffs:
        scale = 1 + np.max(np.abs(u1.coeffs[k])) + np.max(np.abs(u2.coeffs[k]))
        assert np.max(np.abs(u.coeffs[k] - a * u1.coeffs[k] - b * u2.coeffs[k])) <= 1e-10 * scale * (1 + abs(a) + abs(b))


def test_mode_truncation_within_tail_bound():
    # smooth source on the round circle: v = r^-delta / (1.3 - cos theta)
    delta = 0.4
    s_small = build_spectrum(2, "circle", 6)
    s_big = build_spectrum(2, "circle", 12)
    grid = RadialGrid(1.0, 30.0, 300)
    th_nodes = 64

    def gridded(spec):
        (th,), _ = spec.quadrature(th_nodes)
        return np.outer(grid.r ** -delta, 1 / (1.3 - np.cos(th))), (th,)

    v1, nodes = gridded(s_small)
    v2, _ = gridded(s_big)
    u1 = solve(s_small, v1, delta, r_max=30.0, n=300, angular_nodes=th_nodes).reconstruct(nodes)
    sol2 = solve(s_big, v2, delta, r_max=30.0, n=300, angular_nodes=th_nodes)
    u2 = sol2.reconstruct(nodes)
    sup = {}
    for (j, c), f in sol2.sources.items():
        sup[j] = max(sup.get(j, 0.0), float(np.max(np.abs(f))))
    bound = truncation_bound(s_big, sup, 6, 12) * (2 * math.pi) ** -0.5
    change = np.max(np.abs(u2 - u1) / grid.r[:, None] ** 2)
    assert change <= bound


def test_d1_examples():
    z = np.linspace(1.0, 5.0, 81)
    assert np.all(solve_d1(lambda x: 0 * x, lambda x: 1 + 0 * x, z).u == 0)
    s = solve_d1(lambda x: np.ones_like(x), lambda x: x, z)
    assert np.allclose(s.u, (z ** 3 - 1) / 6 - (z - 1) / 2, atol=1e-13)
    assert s.residual <= 1e-10
    s = solve_d1(lambda x: 6 * x, lambda x: np.ones_like(x), z)
    assert np.allclose(s.u, z ** 3 - 1 - 3 * (z - 1), atol=1e-12)


def test_d1_rejects_non_positive_potential():
    with pytest.raises(ValueError):
        solve_d1(lambda x: x, lambda x: x - 2, np.linspace(1, 3, 20))


def test_weighted_norm_examples():
    r = np.geomspace(1, 64, 400)
    n = WeightedNorm(0.4)
    assert 1 <= weighted_norm(r, r ** 0.4, n) <= 2 ** 0.4
    assert weighted_norm(r, 0 * r, n) == 0
    th = np.linspace(0, 2 * np.pi, 129)
    f = np.outer(r ** 0.4, 1 + 0.1 * np.sin(th))
    assert 1 <= weighted_norm(r, f, n, theta=th) <= 1.1 * 2 ** 0.4
    with pytest.raises(InsufficientRange):
        weighted_norm(np.linspace(1, 1.5, 10), np.ones(10), n)
    with pytest.raises(ValueError):
        WeightedNorm(0.4, alpha=1.0)


def test_weighted_norm_derivatives_and_holder():
    r = np.geomspace(1, 64, 2000)
    n = WeightedNorm(0.5, k=1, alpha=0.5)
    val = weighted_norm(r, r ** 0.5, n)
    # value part 1 and derivative part 0.5, each up to the 2^delta annulus slack
    assert 1.5 <= val <= 1.5 * 2 ** 0.5
    assert weighted_norm(r, r ** 0.5, n, holder=True) > val
