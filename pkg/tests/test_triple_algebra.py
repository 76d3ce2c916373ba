from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom.discrete_calculus import FormField, GridChart, hodge_star
from hkgeom.triple_algebra import (
    TF,
    DefiniteTriple,
    NoContraction,
    NotDefinite,
    OutsideLocalChart,
    c2_norm,
    deform,
    gauge_inverse,
    gauge_map,
    gram,
    hessian_norm,
    hk_residual,
    nonlinear_part,
    operator_F,
    read_triple,
    solve_hyperkahler,
    write_triple,
)


def torus(n):
    return GridChart.box((0,) * 4, (1,) * 4, (n,) * 4, periodic=(True,) * 4)


def random_tf_symmetric(rng, radius, size=()):
    A = rng.normal(size=size + (3, 3))
    A = TF(0.5 * (A + np.swapaxes(A, -1, -2)))
    scale = rng.uniform(0, radius, size=size) / np.linalg.norm(A, axis=(-2, -1))
    return A * scale[..., None, None]


def matrix_field(chart, entries):
    out = np.zeros(tuple(chart.extents) + (3, 3))
    for (a, b), v in entries.items():
        out[..., a, b] = v
    return out


def smooth_potential(chart):
    x = chart.coordinates()
    tp = 2 * np.pi
    return matrix_field(chart, {
        (0, 1): np.sin(tp * x[0]) * np.cos(tp * x[2]),
        (2, 2): np.cos(tp * (x[1] + x[3])),
        (1, 0): np.sin(tp * x[3]),
    })


def test_flat_triple_gram_is_identity():
    gm = gram(DefiniteTriple.flat(torus(4)), check_self_dual=True)
    assert np.array_equal(gm.Q[0, 0, 0, 0], np.eye(3))
    assert hk_residual(DefiniteTriple.flat(torus(4))) == 0.0


def test_scaling_gives_lambda_squared():
    lam = 1.7
    gm = gram(DefiniteTriple.flat(torus(4), scale=lam))
    assert np.allclose(gm.Q, lam ** 2 * np.eye(3), rtol=1e-15)
    assert np.allclose(gm.Qnorm, np.eye(3), atol=1e-15)


def test_residual_of_rescaled_first_form():
    c = torus(4)
    t = DefiniteTriple.flat(c)
    bumped = DefiniteTriple(c, (t.omega[0] * 1.1,) + t.omega[1:])
    Q = np.diag([1.21, 1.0, 1.0])
    expected = np.linalg.norm(Q / 1.21 ** (1 / 3) - np.eye(3))
    assert hk_residual(bumped) == pytest.approx(expected, rel=1e-13)
    assert hk_residual(bumped) > 0


def test_not_definite_reports_sample():
    c = torus(4)
    x = c.coordinates()
    flip = np.where(x[0] > 0.6, -1.0, 1.0) * np.ones(c.extents)
    w1 = FormField(c, 2, {(0, 1): 1.0, (2, 3): flip})
    t = DefiniteTriple.flat(c)
    with pytest.raises(NotDefinite) as info:
        gram(DefiniteTriple(c, (w1,) + t.omega[1:]))
    assert info.value.index[0] == 2


def test_metric_of_pulled_back_triple():
    c = torus(4)
    rng = np.random.default_rng(0)
    P = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
    if np.linalg.det(P) < 0:
        P[:, 0] *= -1
    forms = []
    for w in DefiniteTriple.flat(c).omega:
        W = np.zeros((4, 4))
        for (i, j), v in w.components.items():
            W[i, j] = np.ravel(v)[0]
            W[j, i] = -W[i, j]
        Wp = P.T @ W @ P
        forms.append(FormField(c, 2, {(i, j): Wp[i, j] for i in range(4) for j in range(i + 1, 4)}))
    gm = gram(DefiniteTriple(c, tuple(forms)), check_self_dual=True)
    G = np.array([[np.ravel(gm.metric[i, j])[0] for j in range(4)] for i in range(4)])
    # det Q = det(P)^6 here, so the volume normalisation returns exactly P^T P
    assert np.allclose(G, P.T @ P, atol=1e-13)


def test_self_duality_of_deformed_triple():
    c = torus(8)
    t = DefiniteTriple.flat(c)
    tp = t + deform(t, 1e-3 * smooth_potential(c)).theta
    assert gram(tp, check_self_dual=True).self_duality_error() < 1e-10


def test_gauge_map_examples():
    Id = np.eye(3)
    assert np.array_equal(gauge_map(np.zeros((3, 3)), Id), np.zeros((3, 3)))
    a = 0.3
    A = np.diag([a, -a, 0.0])
    expected = np.diag([2 * a + a * a / 3, -2 * a + a * a / 3, -2 * a * a / 3])
    assert np.allclose(gauge_map(A, Id), expected, atol=1e-15)
    Q = np.array([[1.1, 0.05, 0], [0.05, 0.95, 0.02], [0, 0.02, 1.0]])
    assert np.allclose(gauge_map(np.eye(3), Q), 3 * TF(Q), atol=1e-15)


def test_gauge_inverse_zero_and_round_trip():
    Id = np.eye(3)
    assert np.array_equal(gauge_inverse(np.zeros((3, 3)), Id), np.zeros((3, 3)))
    rng = np.random.default_rng(3)
    A = random_tf_symmetric(rng, 0.05, (500,))
    assert np.max(np.abs(gauge_inverse(gauge_map(A, Id), Id) - A)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_gauge_round_trip_on_chart_ball(seed):
    rng = np.random.default_rng(seed)
    A = random_tf_symmetric(rng, 0.1, (20,))
    Q = np.eye(3) + random_tf_symmetric(rng, 0.1)
    Q = Q / np.cbrt(np.linalg.det(Q))
    assert np.max(np.abs(gauge_inverse(gauge_map(A, Q), Q) - A)) <= 1e-10


def test_gauge_inverse_first_order():
    rng = np.random.default_rng(5)
    T0 = random_tf_symmetric(rng, 1.0)
    T0 /= np.linalg.norm(T0)
    errs = []
    for s in (1e-2, 5e-3, 2.5e-3):
        A = gauge_inverse(s * T0, np.eye(3))
        errs.append(np.linalg.norm(A - s * T0 / 2))
    # quadratic remainder: halving |T| quarters the error
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_gauge_inverse_outside_chart():
    with pytest.raises(OutsideLocalChart):
        gauge_inverse(np.diag([0.5, -0.25, -0.25]), np.eye(3))
    with pytest.raises(OutsideLocalChart):
        gauge_inverse(np.zeros((3, 3)), np.diag([1.5, 1.0, 1 / 1.5]))


def test_operator_vanishes_at_base_point_and_constants():
    c = torus(6)
    t = DefiniteTriple.flat(c)
    assert np.max(np.abs(operator_F(t, np.zeros(tuple(c.extents) + (3, 3))))) == 0.0
    const = np.broadcast_to(np.arange(9.0).reshape(3, 3) * 0.01, tuple(c.extents) + (3, 3))
    assert np.max(np.abs(operator_F(t, const))) <= 1e-14


def test_linear_part_on_sine_mode():
    n = 16
    c = torus(n)
    t = DefiniteTriple.flat(c)
    x = c.coordinates()
    eps = 1e-6
    f = matrix_field(c, {(0, 0): eps * np.sin(2 * np.pi * x[0])})
    dfm = deform(t, f)
    # d+d*(f w) = -(1/2) (discrete Laplacian f) w at the flat triple
    h = c.spacing[0]
    lap_symbol = (np.sin(2 * np.pi * h) / h) ** 2
    expected = 0.5 * lap_symbol * f[..., 0, 0]
    assert np.max(np.abs(dfm.A[..., 0, 0] - expected)) <= 1e-12 * eps * lap_symbol + 1e-18
    others = dfm.A.copy()
    others[..., 0, 0] = 0
    assert np.max(np.abs(others)) <= 1e-18
    assert dfm.recomposition_error(t.omega) <= 1e-15
    # continuum value 2 pi^2 eps sin, the self-dual half of 4 pi^2 eps sin; stencil error (kh)^2/3 ~ 5%
    assert expected.max() / eps == pytest.approx(2 * np.pi ** 2 * np.sin(2 * np.pi * x[0]).max(), rel=0.06)


def test_anti_self_dual_gram_is_negative():
    c = torus(8)
    t = DefiniteTriple.flat(c)
    dfm = deform(t, 1e-2 * smooth_potential(c))
    eig = np.linalg.eigvalsh(dfm.S)
    assert eig.max() <= 1e-15
    assert dfm.recomposition_error(t.omega) <= 1e-14


def test_nonlinear_lipschitz_constant_is_stable():
    c = torus(8)
    t = DefiniteTriple.flat(c)
    gm = gram(t)
    rng = np.random.default_rng(2)
    x = c.coordinates()
    constants = []
    for _ in range(4):
        def field():
            out = np.zeros(tuple(c.extents) + (3, 3))
            for a in range(3):
                for b in range(3):
                    k = rng.integers(-1, 2, size=4)
                    out[..., a, b] = rng.normal() * np.cos(2 * np.pi * sum(ki * xi for ki, xi in zip(k, x)) + rng.uniform(0, 6))
            return 2e-3 * out
        f, g = field(), field()
        nf = nonlinear_part(gm, deform(t, f, gm))
        ng = nonlinear_part(gm, deform(t, g, gm))
        lhs = np.linalg.norm(nf - ng, axis=(-2, -1))
        rhs = (hessian_norm(c, f) + hessian_norm(c, g)) * hessian_norm(c, f - g)
        mask = rhs > 1e-3 * rhs.max()
        constants.append(float(np.max(lhs[mask] / rhs[mask])))
    assert max(constants) / min(constants) < 3.0
    assert max(constants) < 10.0


def test_solver_on_hyperkahler_input_stops_immediately():
    c = torus(6)
    res = solve_hyperkahler(DefiniteTriple.flat(c))
    assert res.iterations == 0
    assert np.max(np.abs(res.f)) <= 1e-9


def test_solver_recovers_manufactured_perturbation(tmp_path):
    c = torus(12)
    t = DefiniteTriple.flat(c)
    perturbed = t + deform(t, 1e-3 * smooth_potential(c)).theta
    assert hk_residual(perturbed) > 1e-2
    res = solve_hyperkahler(perturbed)
    assert res.hk_residual <= 1e-8
    assert res.iterations <= 20
    assert max(res.ratios) <= 0.5
    assert c2_norm(c, res.f) <= res.bound
    res.write_log(tmp_path / "log.csv")
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["iter", "residual", "norm_f"] and len(rows) == res.iterations + 2


def test_solver_rejects_far_input():
    c = torus(6)
    t = DefiniteTriple.flat(c)
    # a large constant anti-self-dual shift: closed, not exact, far from hyperkaehler
    shift = FormField(c, 2, {(0, 1): 0.9, (2, 3): -0.9})
    with pytest.raises(NoContraction):
        solve_hyperkahler(DefiniteTriple(c, (t.omega[0] + shift,) + t.omega[1:]))


def test_triple_round_trip(tmp_path):
    c = torus(6)
    t = DefiniteTriple.flat(c)
    tp = t + deform(t, 1e-3 * smooth_potential(c)).theta
    write_triple(tmp_path / "tri", tp)
    back = read_triple(tmp_path / "tri")
    for a, b in zip(tp.omega, back.omega):
        for k in a.components:
            assert np.array_equal(a[k], b[k])
    assert hk_residual(back) == hk_residual(tp)


def test_hodge_consistency_after_solve():
    c = torus(8)
    t = DefiniteTriple.flat(c)
    res = solve_hyperkahler(t + deform(t, 1e-3 * smooth_potential(c)).theta)
    gm = gram(res.triple)
    for w in res.triple.omega:
        assert (hodge_star(w, gm.metric) - w).max_abs() <= 1e-10 * w.max_abs()
