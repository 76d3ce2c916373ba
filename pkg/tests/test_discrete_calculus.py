from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkgeom.discrete_calculus import (
    DegenerateMetric,
    DegreeOverflow,
    EmptyRegion,
    FormField,
    GridChart,
    MetricField,
    NonFiniteField,
    exterior_derivative,
    hodge_star,
    integrate,
    interior_mask,
    partial,
    read_field,
    riemann_curvature,
    wedge,
    write_field,
)


def chart3(n=12, h=0.1):
    return GridChart((n, n, n), (h, h, h), (0.0, 0.0, 0.0))


def interior(arr, chart):
    return np.broadcast_to(arr, chart.extents)[interior_mask(chart)]


def test_chart_rejects_small_extent_and_bad_spacing():
    with pytest.raises(ValueError):
        GridChart((3, 8), (0.1, 0.1), (0, 0))
    with pytest.raises(ValueError):
        GridChart((8, 8), (0.1, 0.0), (0, 0))
    with pytest.raises(ValueError):
        GridChart((8,), (0.1,), (0,))


def test_form_rejects_nonfinite_and_bad_key():
    c = chart3()
    with pytest.raises(NonFiniteField):
        FormField(c, 0, {(): np.full(c.extents, np.nan)})
    with pytest.raises(KeyError):
        FormField(c, 1, {(1, 0): 1.0})


def test_d_of_constant_is_zero():
    c = chart3()
    df = exterior_derivative(FormField(c, 0, {(): 3.7}))
    assert df.max_abs() == 0.0


def test_d_of_coordinate_is_dx():
    c = chart3()
    x, _, _ = c.coordinates()
    df = exterior_derivative(FormField(c, 0, {(): x}))
    assert np.allclose(df[(0,)], 1.0, atol=1e-12)
    assert df.max_abs() == pytest.approx(1.0)
    assert np.all(df[(1,)] == 0) and np.all(df[(2,)] == 0)


def test_d_of_x_dy_is_area_form():
    c = GridChart((16, 16), (0.05, 0.05), (0.2, -0.3))
    x, _ = c.coordinates()
    df = exterior_derivative(FormField(c, 1, {(1,): x * np.ones((1, 16))}))
    assert np.allclose(df[(0, 1)], 1.0, atol=1e-12)


def test_degree_overflow():
    c = chart3()
    with pytest.raises(DegreeOverflow):
        exterior_derivative(FormField(c, 3, {(0, 1, 2): 1.0}))


def smooth_one_form(c):
    x, y, z = c.coordinates()
    return FormField(c, 1, {
        (0,): np.sin(x) * np.cos(2 * y) * np.exp(z / 3),
        (1,): x * y * z + np.cos(x + z),
        (2,): np.exp(-x * x - y * y) * z,
    })


def test_dd_vanishes_under_refinement():
    res = []
    for n in (16, 32):
        c = GridChart((n, n, n), (1.0 / n,) * 3, (0.0, 0.0, 0.0))
        ddf = exterior_derivative(exterior_derivative(smooth_one_form(c)))
        res.append(ddf.max_abs(interior=2) / c.spacing[0] ** 2)
    # centred differences along distinct axes commute, so the residual is round-off
    assert max(res) < 1e-8


def test_dd_periodic_axis():
    c = GridChart((16, 16, 8), (0.1, 0.1, 2 * math.pi / 8), (0.0, 0.0, 0.0), (False, False, True))
    x, y, t = c.coordinates()
    f = FormField(c, 0, {(): np.sin(t) * x * y})
    assert exterior_derivative(exterior_derivative(f)).max_abs(interior=2) < 1e-12


@pytest.mark.parametrize("order", [2, 4, 6])
def test_partial_order_of_accuracy(order):
    errs = []
    for n in (20, 40):
        c = GridChart((n, 4), (1.0 / n, 1.0), (0.0, 0.0))
        x, _ = c.coordinates()
        errs.append(np.abs(partial(np.sin(3 * x), 0, c, order) - 3 * np.cos(3 * x)).max())
    assert math.log2(errs[0] / errs[1]) > order - 0.6


def test_hodge_4d_examples():
    c = GridChart((4, 4, 4, 4), (1.0,) * 4, (0.0,) * 4)
    g = MetricField.flat(c)
    s = hodge_star(FormField(c, 2, {(0, 1): 1.0}), g)
    assert np.all(s[(2, 3)] == 1.0)
    assert sum(np.abs(v).sum() for k, v in s.components.items() if k != (2, 3)) == 0
    sd = FormField(c, 2, {(0, 1): 1.0, (2, 3): 1.0})
    assert (hodge_star(sd, g) - sd).max_abs() == 0.0


def test_hodge_3d_dx():
    c = chart3(4, 1.0)
    s = hodge_star(FormField(c, 1, {(0,): 1.0}), MetricField.flat(c))
    assert np.all(s[(1, 2)] == 1.0) and np.all(s[(0, 2)] == 0.0)


def test_hodge_orientation_flips_sign():
    c = chart3(4, 1.0)
    f = FormField(c, 1, {(1,): 2.0})
    g = MetricField.flat(c)
    assert (hodge_star(f, g, -1) + hodge_star(f, g, 1)).max_abs() == 0.0


def test_degenerate_metric_rejected():
    c = chart3(4, 1.0)
    with pytest.raises(DegenerateMetric):
        MetricField(c, {(0, 0): 1.0, (1, 1): 1.0, (2, 2): 1.0, (0, 1): 1.0})


spd_entries = st.lists(st.floats(-1.0, 1.0), min_size=16, max_size=16)


@settings(max_examples=40, deadline=None)
@given(dim=st.sampled_from([2, 3, 4]), raw=spd_entries, comps=st.lists(st.floats(-5, 5), min_size=6, max_size=6),
       data=st.data())
def test_double_hodge_is_signed_identity(dim, raw, comps, data):
    a = np.array(raw).reshape(4, 4)[:dim, :dim]
    mat = a @ a.T + 0.5 * np.eye(dim)
    c = GridChart((4,) * dim, (1.0,) * dim, (0.0,) * dim)
    g = MetricField(c, {(i, j): mat[i, j] for i in range(dim) for j in range(i, dim)})
    k = data.draw(st.integers(0, dim))
    import itertools
    keys = list(itertools.combinations(range(dim), k))
    f = FormField(c, k, {key: comps[n] for n, key in enumerate(keys)})
    back = hodge_star(hodge_star(f, g), g)
    sign = (-1) ** (k * (dim - k))
    assert (back - sign * f).max_abs() <= 1e-10 * (1 + f.max_abs())


def test_wedge_anticommutes_on_one_forms():
    c = chart3()
    x, y, z = c.coordinates()
    a = FormField(c, 1, {(0,): x, (2,): y})
    b = FormField(c, 1, {(1,): z, (2,): 1.0})
    assert (wedge(a, b) + wedge(b, a)).max_abs() < 1e-15


def test_flat_metric_has_no_curvature():
    c = chart3(8, 0.1)
    cv = riemann_curvature(MetricField.flat(c))
    assert np.max(np.abs(cv.norm_sq)) <= 1e-10


def test_round_sphere_scalar_curvature():
    c = GridChart.box([0.5, 0.0], [2.5, 1.0], [80, 40])
    th, _ = c.coordinates()
    cv = riemann_curvature(MetricField(c, {(0, 0): 1.0, (1, 1): np.sin(th) ** 2}))
    s = interior(cv.scalar, c)
    assert np.all(np.abs(s - 2.0) <= 0.02)
    # R_1212 = sin^2 for the unit sphere in this sign convention
    r = interior(cv.R(0, 1, 0, 1), c)
    assert np.allclose(r, interior(np.sin(th) ** 2, c), rtol=5e-3)


def random_metric(c, seed):
    rng = np.random.default_rng(seed)
    xs = c.coordinates()
    g = {}
    n = c.dim
    for i in range(n):
        for j in range(i, n):
            amp = 0.08 * rng.standard_normal(n)
            phase = rng.uniform(0, 2 * np.pi, n)
            val = sum(amp[k] * np.sin(1.3 * xs[k] + phase[k]) for k in range(n))
            g[(i, j)] = (1.0 + val) if i == j else 0.5 * val
    return MetricField(c, g)


def bianchi_residual(n, seed):
    c = GridChart((n,) * 4, (1.0 / n,) * 4, (0.0,) * 4)
    cv = riemann_curvature(random_metric(c, seed))
    worst = 0.0
    for a, b, cc, d in [(0, 1, 2, 3), (1, 0, 2, 3), (2, 0, 1, 3)]:
        s = cv.R(a, b, cc, d) + cv.R(a, cc, d, b) + cv.R(a, d, b, cc)
        worst = max(worst, np.abs(interior(s, c)).max())
    return worst


@pytest.mark.parametrize("seed", [0, 1])
def test_first_bianchi_identity_at_discretization_order(seed):
    coarse, fine = bianchi_residual(10, seed), bianchi_residual(20, seed)
    assert fine < 1e-4
    assert coarse / fine > 3.0


def test_scalar_is_trace_of_ricci_in_three_dimensions():
    c = GridChart((10, 10, 10), (0.1,) * 3, (0.0,) * 3)
    g = random_metric(c, 5)
    cv = riemann_curvature(g)
    assert set(cv.ricci) == {(i, j) for i in range(3) for j in range(i, 3)}
    tr = sum(g.inv(i, j) * cv.ricci[(min(i, j), max(i, j))] for i in range(3) for j in range(3))
    assert np.allclose(tr, cv.scalar, atol=1e-12)
    # pair symmetry is exact by construction
    assert np.array_equal(cv.R(0, 1, 0, 2), cv.R(0, 2, 0, 1))


def test_integrate_unit_cube():
    c = GridChart.box([0, 0, 0], [1, 1, 1], [10, 10, 10])
    assert abs(integrate(FormField(c, 0, {(): 1.0}), MetricField.flat(c)) - 1.0) <= 1e-12


def test_integrate_conformal_cube():
    c = GridChart.box([0, 0, 0], [1, 1, 1], [10, 10, 10])
    val = integrate(FormField(c, 0, {(): 1.0}), MetricField.conformal(c, 4.0))
    assert val == pytest.approx(8.0, abs=1e-12)


def test_integrate_ball_volume():
    c = GridChart.box([-1.02] * 3, [1.02] * 3, [102] * 3)
    assert c.spacing[0] == pytest.approx(0.02)
    val = integrate(FormField(c, 0, {(): 1.0}), MetricField.flat(c),
                    lambda x, y, z: x * x + y * y + z * z <= 1.0)
    assert abs(val - 4 * math.pi / 3) <= 0.02 * 4 * math.pi / 3


def test_integrate_empty_region_warns():
    c = chart3()
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        val = integrate(FormField(c, 0, {(): 1.0}), None, np.zeros(c.extents, bool))
    assert val == 0.0
    assert any(issubclass(w.category, EmptyRegion) for w in rec)


def test_integrate_second_order_convergence():
    exact = (math.e - 1) ** 3
    errs = []
    for n in (8, 16, 32):
        c = GridChart.box([0, 0, 0], [1, 1, 1], [n, n, n])
        x, y, z = c.coordinates()
        errs.append(abs(integrate(FormField(c, 0, {(): np.exp(x + y + z)})) - exact))
    for a, b in zip(errs, errs[1:]):
        assert 3.6 <= a / b <= 4.4


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), shift=st.floats(0, 2))
def test_integrate_linear_and_monotone(a, b, shift):
    c = GridChart.box([0, 0], [1, 2], [8, 8])
    x, y = c.coordinates()
    f = FormField(c, 0, {(): np.sin(x) * y})
    g = FormField(c, 0, {(): np.cos(x + y)})
    lhs = integrate(a * f + b * g)
    rhs = a * integrate(f) + b * integrate(g)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert integrate(f + shift) >= integrate(f) - 1e-12


def test_field_file_round_trip_is_bit_exact(tmp_path):
    c = GridChart((5, 6, 4, 4), (0.1, 0.2, 0.3, 0.4), (-1.0, 0.5, 0.0, 0.0), (False, False, True, True))
    rng = np.random.default_rng(3)
    f = FormField(c, 2, {(0, 1): rng.standard_normal((5, 6, 4, 1)), (2, 3): rng.standard_normal(c.extents)})
    p = tmp_path / "f.hkf"
    write_field(p, f)
    g = read_field(p)
    assert g.chart == c and g.degree == 2
    for k in f.components:
        assert np.array_equal(f[k], g[k])
    raw = p.read_bytes()
    header, _, body = raw.partition(b"end\n")
    assert header.startswith(b"HKFIELD 1\n")
    # four untouched components are stored as single broadcast samples
    assert len(body) == 8 * (5 * 6 * 4 + 5 * 6 * 4 * 4 + 4)
