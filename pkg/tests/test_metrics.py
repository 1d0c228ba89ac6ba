"""Metrics, the implicit deformed norm, and the derivative transfer formulas."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zermelo.metrics import (AdmissibilityError, ConvexityError, FinslerDomainError, PointedVector,
                             base_argument, base_derivatives, check_admissible, constant_wind,
                             euclidean, finsler_eval, fundamental_tensor, orthogonality_residual,
                             perturbed_sphere, randers_flat_closed_form, rotation_wind,
                             sphere_stereographic, translated_argument, zermelo, zermelo_eval,
                             zermelo_fundamental, zermelo_gradient, zermelo_hessian)

E2 = euclidean(2)
S2 = sphere_stereographic(2)
ROT = rotation_wind(0.5)
CONST = constant_wind([0.5, 0.0])

SCENARIOS = {
    "flat_randers": (E2, constant_wind([0.3, -0.4]), 2.0),
    "planar_rotation": (E2, rotation_wind(0.5), 1.6),
    "katok": (S2, rotation_wind(0.5), 2.0),
}


def _samples(rng, n, radius):
    x = rng.uniform(-radius, radius, size=(n, 2)) / np.sqrt(2)
    xi = rng.normal(size=(n, 2))
    return x, xi


def test_euclidean_norm():
    assert finsler_eval(E2, [0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)


def test_sphere_chart_factor_at_origin():
    assert finsler_eval(S2, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(2.0)


def test_pointed_vector_rejects_zero():
    with pytest.raises(ValueError):
        PointedVector(np.zeros(2), np.zeros(2))


def test_outside_region_raises():
    with pytest.raises(FinslerDomainError):
        finsler_eval(perturbed_sphere(2), [-11.0, 0.0], [1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4), st.floats(0.1, 10.0),
       st.sampled_from(sorted(SCENARIOS)))
def test_positive_homogeneity(vals, lam, name):
    base, wind, _ = SCENARIOS[name]
    x, xi = np.array(vals[:2]), np.array(vals[2:])
    if np.linalg.norm(xi) < 1e-3:
        xi = xi + 1.0
    for metric in (base, zermelo(base, wind)):
        assert finsler_eval(metric, x, lam * xi) == pytest.approx(lam * finsler_eval(metric, x, xi), rel=1e-12)


def test_fundamental_tensor_flat_and_riemannian():
    np.testing.assert_allclose(fundamental_tensor(E2, [0.2, 0.1], [0.3, -2.0]), np.eye(2), atol=1e-14)
    x = np.array([0.4, -0.3])
    lam = 2.0 / (1.0 + x @ x)
    for xi in ([1.0, 0.0], [-0.3, 2.0]):
        np.testing.assert_allclose(fundamental_tensor(S2, x, xi), lam**2 * np.eye(2), rtol=1e-13)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_deformed_metric_is_strictly_convex_and_satisfies_euler(name):
    base, wind, r = SCENARIOS[name]
    Z = zermelo(base, wind)
    x, xi = _samples(np.random.default_rng(1), 100, r)
    g = fundamental_tensor(Z, x, xi)
    assert np.all(np.linalg.eigvalsh(g)[:, 0] > 0)
    quad = np.einsum("ni,nij,nj->n", xi, g, xi)
    np.testing.assert_allclose(quad, finsler_eval(Z, x, xi) ** 2, rtol=1e-10)


def test_convexity_failure_is_reported():
    from zermelo.metrics import Metric

    def bad(x, xi):
        # indefinite quadratic form; positive near (1, 0) so F is defined there
        from zermelo import jets
        return jets.sqrt(xi[0] * xi[0] - 0.5 * xi[1] * xi[1])

    with pytest.raises(ConvexityError):
        fundamental_tensor(Metric(2, bad, name="indefinite"), [0.0, 0.0], [1.0, 0.1])


def test_zermelo_closed_form_examples():
    assert zermelo_eval(E2, CONST, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert zermelo_eval(E2, CONST, [0.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0, abs=1e-15)


def test_zero_wind_is_identity():
    rng = np.random.default_rng(3)
    x, xi = _samples(rng, 50, 2.0)
    zero = constant_wind([0.0, 0.0])
    np.testing.assert_allclose(zermelo_eval(S2, zero, x, xi), finsler_eval(S2, x, xi), rtol=1e-15)
    np.testing.assert_allclose(zermelo_gradient(S2, zero, x, xi), base_derivatives(S2, x, xi)[1], rtol=1e-14)
    np.testing.assert_allclose(zermelo_fundamental(S2, zero, x, xi), fundamental_tensor(S2, x, xi), rtol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(0.0, 0.95), st.floats(0, 2 * np.pi))
def test_newton_matches_randers_quadratic(x1, x2, u1, u2, speed, angle):
    if abs(u1) + abs(u2) < 1e-6:
        u1 = 1.0
    a = speed * np.array([np.cos(angle), np.sin(angle)])
    xi = np.array([u1, u2])
    r = zermelo_eval(E2, constant_wind(a), [x1, x2], xi)
    assert r == pytest.approx(float(randers_flat_closed_form(a, xi)), rel=1e-12)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_defining_identity_and_unit_translation(name):
    base, wind, r = SCENARIOS[name]
    x, xi = _samples(np.random.default_rng(4), 100, r)
    Ft = zermelo_eval(base, wind, x, xi)
    np.testing.assert_allclose(finsler_eval(base, x, xi - Ft[:, None] * wind(x)), Ft, rtol=1e-12)
    unit = xi / finsler_eval(base, x, xi)[:, None]
    np.testing.assert_allclose(zermelo_eval(base, wind, x, unit + wind(x)), 1.0, rtol=0, atol=1e-12)
    zeta = translated_argument(base, wind, x, xi)
    np.testing.assert_allclose(base_argument(base, wind, x, zeta), xi, rtol=1e-12, atol=1e-13)


def test_near_critical_wind_converges():
    a = np.array([0.999999, 0.0])
    r = zermelo_eval(E2, constant_wind(a), [0.0, 0.0], [-1.0, 0.0])
    assert r == pytest.approx(float(randers_flat_closed_form(a, np.array([-1.0, 0.0]))), rel=1e-10)


def test_inadmissible_wind_raises():
    with pytest.raises(AdmissibilityError, match="admissibility violated"):
        zermelo_eval(E2, constant_wind([1.5, 0.0]), [0.0, 0.0], [1.0, 0.0])


def test_check_admissible_examples():
    pts = np.random.default_rng(0).uniform(-2, 2, size=(50, 2))
    ok = check_admissible(E2, CONST, pts)
    assert ok.passed and ok.max_value == pytest.approx(0.5)
    bad = check_admissible(E2, constant_wind([1.5, 0.0]), pts)
    assert not bad.passed and bad.max_value == pytest.approx(1.5)
    r = np.linspace(0, 3, 301)
    ring = np.stack([r, 0 * r], axis=-1)
    rep = check_admissible(S2, rotation_wind(0.9), ring)
    assert rep.passed and rep.max_value == pytest.approx(0.9, abs=1e-12)
    assert rep.worst_point[0] == pytest.approx(1.0)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_transfer_formulas_match_direct_differentiation(name):
    base, wind, r = SCENARIOS[name]
    Z = zermelo(base, wind)
    x, xi = _samples(np.random.default_rng(7), 100, r)
    zeta = translated_argument(base, wind, x, xi)
    F, dF, H = base_derivatives(Z, x, zeta)
    g = fundamental_tensor(Z, x, zeta)
    np.testing.assert_allclose(zermelo_gradient(base, wind, x, xi), dF, rtol=1e-9, atol=1e-12)
    scale_H = np.max(np.abs(H), axis=(-2, -1), keepdims=True)
    assert np.max(np.abs(zermelo_hessian(base, wind, x, xi) - H) / scale_H) < 1e-8
    scale_g = np.max(np.abs(g), axis=(-2, -1), keepdims=True)
    assert np.max(np.abs(zermelo_fundamental(base, wind, x, xi) - g) / scale_g) < 1e-8


def test_printed_forms_agree_only_on_tangent_directions():
    base, wind = S2, ROT
    x, xi = _samples(np.random.default_rng(8), 50, 2.0)
    xi = xi / finsler_eval(base, x, xi)[:, None]
    exact = zermelo_hessian(base, wind, x, xi)
    printed = zermelo_hessian(base, wind, x, xi, printed=True)
    assert np.max(np.abs(exact - printed)) > 1e-3
    _, dF, _ = base_derivatives(base, x, xi)
    J = np.stack([-dF[:, 1], dF[:, 0]], axis=-1)  # dF(J) = 0
    q_exact = np.einsum("ni,nij,nj->n", J, exact, J)
    q_printed = np.einsum("ni,nij,nj->n", J, printed, J)
    np.testing.assert_allclose(q_printed, q_exact, rtol=1e-12)
    gq = np.einsum("ni,nij,nj->n", J, zermelo_fundamental(base, wind, x, xi, printed=True), J)
    gq_exact = np.einsum("ni,nij,nj->n", J, zermelo_fundamental(base, wind, x, xi), J)
    np.testing.assert_allclose(gq, gq_exact, rtol=1e-12)


def test_gradient_is_zero_homogeneous():
    x, xi = _samples(np.random.default_rng(9), 20, 2.0)
    np.testing.assert_allclose(zermelo_gradient(S2, ROT, x, 2 * xi), zermelo_gradient(S2, ROT, x, xi), rtol=1e-13)


def test_hessian_annihilates_the_translated_argument():
    x, xi = _samples(np.random.default_rng(10), 20, 2.0)
    zeta = translated_argument(S2, ROT, x, xi)
    H = zermelo_hessian(S2, ROT, x, xi)
    assert np.max(np.abs(np.einsum("nij,nj->ni", H, zeta))) < 1e-12


def test_orthogonality_two_forms():
    lhs, rhs = orthogonality_residual(E2, [0.0, 0.0], [1.0, 0.0], [0.0, 1.0])
    assert lhs == 0.0 and rhs == 0.0
    Z = zermelo(S2, ROT)
    rng = np.random.default_rng(11)
    x, xi = _samples(rng, 100, 2.0)
    U = rng.normal(size=x.shape)
    lhs, rhs = orthogonality_residual(Z, x, xi, U)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-11, atol=1e-13)
    lhs, _ = orthogonality_residual(Z, x, xi, xi)
    np.testing.assert_allclose(lhs, finsler_eval(Z, x, xi) ** 2, rtol=1e-12)


def test_tangency_is_transported():
    Z = zermelo(S2, ROT)
    x, xi = _samples(np.random.default_rng(12), 50, 2.0)
    xi = xi / finsler_eval(S2, x, xi)[:, None]
    _, dF, _ = base_derivatives(S2, x, xi)
    J = np.stack([-dF[:, 1], dF[:, 0]], axis=-1)
    _, dFt, _ = base_derivatives(Z, x, xi + ROT(x))
    assert np.max(np.abs(np.einsum("ni,ni->n", dFt, J))) < 1e-10
