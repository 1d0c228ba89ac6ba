"""Spray, curvature, geodesic and Jacobi integration, covariant derivatives."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zermelo.geodesics import (ChartExitError, DegenerateFlagError, connection,
                               covariant_derivative_along, flag_curvature, integrate_geodesic,
                               integrate_jacobi, jacobi_derivative_residual, jacobi_residual,
                               local_symmetry_residual, riemann_operator, second_variation_residual,
                               shooting_jacobi, spray, time_derivative)
from zermelo.metrics import (constant_wind, euclidean, finsler_eval, fundamental_tensor,
                             rotation_wind, sphere_stereographic, zermelo)

E2 = euclidean(2)
S2 = sphere_stereographic(2)
METRICS = {
    "euclidean": E2,
    "sphere": S2,
    "flat_randers": zermelo(E2, constant_wind([0.3, -0.4])),
    "katok": zermelo(S2, rotation_wind(0.5)),
}


def _unit(metric, x, xi):
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    return xi / finsler_eval(metric, x, xi)[..., None]


def _pvs(rng, n=100):
    return rng.uniform(-0.8, 0.8, size=(n, 2)), rng.normal(size=(n, 2))


def test_euclidean_spray_vanishes():
    sj = spray(E2, [0.3, 0.2], [1.0, -0.5])
    for block in (sj.G, sj.dG_dx, sj.dG_dxi, sj.d2G_dxdxi, sj.d2G_dxi2):
        assert np.all(block == 0.0)


@pytest.mark.parametrize("name", sorted(METRICS))
def test_spray_and_curvature_are_two_homogeneous(name):
    m = METRICS[name]
    x, xi = _pvs(np.random.default_rng(1), 20)
    s1, s2 = spray(m, x, xi), spray(m, x, 2 * xi)
    np.testing.assert_allclose(s2.G, 4 * s1.G, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(riemann_operator(m, x, 2 * xi), 4 * riemann_operator(m, x, xi),
                               rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("name", sorted(METRICS))
def test_jacobi_operator_kills_the_flagpole(name):
    m = METRICS[name]
    x, xi = _pvs(np.random.default_rng(2))
    R = riemann_operator(m, x, xi)
    Rxi = np.einsum("nik,nk->ni", R, xi)
    scale = np.linalg.norm(R, axis=(-2, -1)) + 1e-300
    assert np.max(np.linalg.norm(Rxi, axis=-1) / np.maximum(scale, 1.0)) < 1e-8


@pytest.mark.parametrize("name", ["sphere", "katok"])
def test_jacobi_operator_is_g_self_adjoint(name):
    m = METRICS[name]
    rng = np.random.default_rng(3)
    x, xi = _pvs(rng, 30)
    g = fundamental_tensor(m, x, xi)
    R = riemann_operator(m, x, xi)
    u, w = rng.normal(size=(2, 30, 2))
    # project both onto the g-orthogonal complement of xi
    gxx = np.einsum("ni,nij,nj->n", xi, g, xi)
    u = u - (np.einsum("ni,nij,nj->n", xi, g, u) / gxx)[:, None] * xi
    w = w - (np.einsum("ni,nij,nj->n", xi, g, w) / gxx)[:, None] * xi
    a = np.einsum("ni,nij,njk,nk->n", w, g, R, u)
    b = np.einsum("ni,nij,njk,nk->n", u, g, R, w)
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-12)


def test_sphere_curvature_eigenvalues():
    x = np.array([0.4, -0.2])
    xi = _unit(S2, x, [0.3, 1.0])
    R = riemann_operator(S2, x, xi)
    ev = np.sort(np.linalg.eigvals(R).real)
    np.testing.assert_allclose(ev, [0.0, 1.0], atol=1e-6)
    np.testing.assert_allclose(riemann_operator(E2, x, xi), 0.0, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 6.28), st.floats(0.1, 6.1))
def test_sphere_flag_curvature_is_one(x1, x2, a, b):
    x = np.array([x1, x2])
    xi = np.array([np.cos(a), np.sin(a)])
    eta = np.array([np.cos(a + b), np.sin(a + b)])
    if abs(np.sin(b)) < 1e-3:
        return
    assert flag_curvature(S2, x, xi, eta) == pytest.approx(1.0, abs=1e-6)
    assert flag_curvature(E2, x, xi, eta) == 0.0


def test_flag_curvature_invariances():
    m = METRICS["katok"]
    rng = np.random.default_rng(4)
    x, xi = _pvs(rng, 20)
    eta = rng.normal(size=x.shape)
    K = flag_curvature(m, x, xi, eta)
    np.testing.assert_allclose(flag_curvature(m, x, 3.0 * xi, eta), K, rtol=1e-9)
    np.testing.assert_allclose(flag_curvature(m, x, xi, -2.0 * eta + 0.7 * xi), K, rtol=1e-9)


def test_degenerate_flag_is_rejected():
    with pytest.raises(DegenerateFlagError):
        flag_curvature(S2, [0.1, 0.2], [1.0, 0.5], [2.0, 1.0])


def test_euclidean_geodesic_is_a_straight_line():
    traj = integrate_geodesic(E2, [0.0, 0.0], [1.0, 0.0], 1.0)
    np.testing.assert_allclose(traj.x[-1], [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(traj.x[:, 1], 0.0, atol=0)


def test_great_circle_returns_after_two_pi():
    # the equator |x| = 1 is a great circle lying inside the chart
    traj = integrate_geodesic(S2, [1.0, 0.0], _unit(S2, [1.0, 0.0], [0.0, 1.0]), 2 * np.pi)
    np.testing.assert_allclose(traj.x[-1], [1.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(traj.x, axis=-1), 1.0, atol=1e-9)


@pytest.mark.parametrize("name", sorted(METRICS))
def test_arc_length_is_conserved(name):
    m = METRICS[name]
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-0.5, 0.5, size=(4, 2))
    xi0 = _unit(m, x0, rng.normal(size=(4, 2)))
    traj = integrate_geodesic(m, x0, xi0, 1.0)
    F = finsler_eval(m, traj.x, traj.xdot)
    assert np.max(np.abs(F - 1.0)) < 1e-7


def test_non_unit_start_needs_opt_out():
    with pytest.raises(ValueError):
        integrate_geodesic(E2, [0.0, 0.0], [2.0, 0.0], 0.1)
    integrate_geodesic(E2, [0.0, 0.0], [2.0, 0.0], 0.1, require_unit=False)


def test_chart_exit_keeps_the_partial_trajectory():
    inside = lambda x: np.linalg.norm(x, axis=-1) < 0.5  # noqa: E731
    with pytest.raises(ChartExitError) as info:
        integrate_geodesic(E2, [0.0, 0.0], [1.0, 0.0], 1.0, domain=inside)
    part = info.value.trajectory
    assert part.t[-1] == pytest.approx(0.499, abs=2e-3)
    assert np.all(np.linalg.norm(part.x, axis=-1) < 0.5)


def test_freeze_flags_members_that_leave():
    inside = lambda x: np.linalg.norm(x, axis=-1) < 0.5  # noqa: E731
    traj = integrate_geodesic(E2, [[0.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 0.1 / 0.1]], 0.3,
                              domain=inside, on_exit="freeze")
    assert traj.valid.tolist() == [True, True]
    traj = integrate_geodesic(E2, [[0.0, 0.0], [0.3, 0.0]], [[1.0, 0.0], [1.0, 0.0]], 0.3,
                              domain=inside, on_exit="freeze")
    assert traj.valid.tolist() == [True, False]


def test_trajectory_csv_columns():
    traj = integrate_geodesic(E2, [0.0, 0.0], [0.6, 0.8], 0.01)
    text = traj.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "t,x_1,x_2,xi_1,xi_2"
    assert len(lines) == 1 + 11  # header plus samples at t = 0, 0.001, ..., 0.01
    buf = io.StringIO()
    traj.to_csv(buf)
    assert buf.getvalue() == text


def test_time_derivative_orders_and_limits():
    t = np.linspace(0, 1, 101)
    h = t[1] - t[0]
    d1 = time_derivative(np.sin(t), h)
    d2 = time_derivative(np.sin(t), h, deriv=2)
    assert np.max(np.abs(d1 - np.cos(t))) < 1e-8
    assert np.max(np.abs(d2 + np.sin(t))) < 1e-5
    with pytest.raises(ValueError):
        time_derivative(np.zeros(4), 0.1)


def test_covariant_derivative_flat_and_along_geodesics():
    traj = integrate_geodesic(E2, [0.0, 0.0], [0.6, 0.8], 0.5)
    X = np.stack([np.sin(traj.t), traj.t**2], axis=-1)
    np.testing.assert_allclose(covariant_derivative_along(traj, X), time_derivative(X, traj.step))
    for m in (S2, METRICS["katok"]):
        x0 = np.array([0.3, -0.2])
        traj = integrate_geodesic(m, x0, _unit(m, x0, [1.0, 0.4]), 1.0)
        acc = covariant_derivative_along(traj, traj.xdot)
        assert np.max(np.abs(acc)) < 1e-6


def test_metric_compatibility_on_the_sphere():
    x0 = np.array([0.2, 0.1])
    traj = integrate_geodesic(S2, x0, _unit(S2, x0, [0.5, 1.0]), 1.0)
    t = traj.t
    X = np.stack([np.cos(t), np.sin(2 * t)], axis=-1)
    Y = np.stack([t**2 - 0.3, np.exp(-t)], axis=-1)
    g = fundamental_tensor(S2, traj.x, traj.xdot)
    gXY = np.einsum("ti,tij,tj->t", X, g, Y)
    DX, DY = covariant_derivative_along(traj, X), covariant_derivative_along(traj, Y)
    rhs = np.einsum("ti,tij,tj->t", DX, g, Y) + np.einsum("ti,tij,tj->t", X, g, DY)
    assert np.max(np.abs(time_derivative(gXY, traj.step) - rhs)) < 1e-5


def test_flat_jacobi_fields_are_linear():
    traj = integrate_geodesic(E2, [0.0, 0.0], [1.0, 0.0], 1.0)
    jac = integrate_jacobi(E2, traj, [0.0, 1.0], [0.5, -0.25])
    expect = np.array([0.0, 1.0]) + traj.t[:, None] * np.array([0.5, -0.25])
    np.testing.assert_allclose(jac.J[:, 0], expect, atol=1e-13)


def _sphere_normal_field(x0):
    xi0 = _unit(S2, x0, [1.0, 0.5])
    g = fundamental_tensor(S2, x0, xi0)
    n = np.array([-xi0[1], xi0[0]])
    return xi0, n / np.sqrt(n @ g @ n)


def test_sphere_jacobi_field_length_is_sine():
    x0 = np.array([0.3, 0.1])
    xi0, n = _sphere_normal_field(x0)
    traj = integrate_geodesic(S2, x0, xi0, 1.5)
    jac = integrate_jacobi(S2, traj, np.zeros(2), n)
    g = fundamental_tensor(S2, jac.geodesic.x, jac.geodesic.xdot)
    length = np.sqrt(np.einsum("ti,tij,tj->t", jac.J[:, 0], g, jac.J[:, 0]))
    assert np.max(np.abs(length - np.sin(traj.t))) < 1e-5
    assert np.max(jacobi_residual(S2, jac)) < 1e-5


@pytest.mark.parametrize("name", ["euclidean", "sphere", "katok"])
def test_jacobi_matches_shooting_oracle(name):
    m = METRICS[name]
    x0 = np.array([0.3, 0.1])
    xi0 = _unit(m, x0, [1.0, 0.5])
    J0, DJ0 = np.array([0.2, -0.3]), np.array([-0.1, 0.4])
    traj = integrate_geodesic(m, x0, xi0, 1.0)
    jac = integrate_jacobi(m, traj, J0, DJ0)
    shot = shooting_jacobi(m, x0, xi0, J0, DJ0, 1.0)
    assert np.max(np.abs(jac.J[:, 0] - shot)) < 1e-4


def test_second_variation_identity():
    x0 = np.array([0.3, 0.1])
    traj = integrate_geodesic(E2, x0, [0.6, 0.8], 1.0)
    jac = integrate_jacobi(E2, traj, [0.1, 0.2], [0.3, -0.1])
    assert second_variation_residual(E2, jac) < 1e-6
    xi0, n = _sphere_normal_field(x0)
    traj = integrate_geodesic(S2, x0, xi0, 1.0)
    jac = integrate_jacobi(S2, traj, 0.3 * n + 0.1 * xi0, n)
    assert second_variation_residual(S2, jac) < 1e-4


def test_local_symmetry_flat_and_round():
    assert local_symmetry_residual(E2, [0.0, 0.0], [1.0, 0.0], T=0.5) == 0.0
    x0 = np.array([[0.2, 0.1], [-0.4, 0.3]])
    xi0 = _unit(S2, x0, np.array([[1.0, 0.2], [0.1, -1.0]]))
    assert local_symmetry_residual(S2, x0, xi0, T=1.0) < 1e-5


def test_derivative_of_a_jacobi_field_is_jacobi_on_the_sphere():
    x0 = np.array([0.3, 0.1])
    xi0, n = _sphere_normal_field(x0)
    traj = integrate_geodesic(S2, x0, xi0, 1.0)
    jac = integrate_jacobi(S2, traj, 0.5 * n, n)
    assert jacobi_derivative_residual(S2, jac) < 1e-5


def test_connection_is_spray_derivative():
    x, xi = np.array([0.3, -0.1]), np.array([0.7, 0.2])
    G, N = connection(METRICS["katok"], x, xi)
    np.testing.assert_allclose(N @ xi, 2 * G, rtol=1e-10)
