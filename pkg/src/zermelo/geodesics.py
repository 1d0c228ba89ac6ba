"""Geodesic spray, geodesic and Jacobi-field integration, curvature.

The spray ``G`` is defined by ``x'' = -2 G(x, x')``. Covariant derivatives
along geodesics use the nonlinear connection ``N^i_j = dG^i/dxi_j``; along a
geodesic with reference vector its own velocity this is the common
specialization of the Berwald and Chern-Rund connections.

Trajectory arrays carry time on axis 0 and may carry batch axes before the
final component axis, e.g. ``x`` of shape ``(steps + 1, n_starts, n)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .jets import Jet
from .metrics import Metric, finsler_eval, fundamental_tensor, split


class ChartExitError(RuntimeError):
    """Integration left the admissible domain; ``trajectory`` holds the samples so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class DegenerateFlagError(ValueError):
    """Flagpole and transverse edge are (numerically) linearly dependent."""


# spray ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class SprayJet:
    """Spray coefficients and the derivative blocks curvature needs.

    Index conventions: ``dG_dx[..., i, k] = dG^i/dx^k``,
    ``d2G_dxdxi[..., i, j, k] = d2G^i/dx^j dxi^k``,
    ``d2G_dxi2[..., i, j, k] = d2G^i/dxi^j dxi^k``.
    """

    G: np.ndarray
    dG_dx: np.ndarray
    dG_dxi: np.ndarray
    d2G_dxdxi: np.ndarray
    d2G_dxi2: np.ndarray


def _broadcast(x, xi):
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(x.shape, xi.shape)
    return np.broadcast_to(x, shape), np.broadcast_to(xi, shape)


def _lagrangian(metric: Metric, x, xi, order: int) -> Jet:
    """F^2 as a jet in all 2n variables (x, xi)."""
    x, xi = _broadcast(x, xi)
    n = x.shape[-1]
    v = Jet.variables(np.concatenate([x, xi], axis=-1), order)
    F = metric.evaluator(v[:n], v[n:])
    return F * F


def _jet_solve(A, b):
    """Solve A y = b for symmetric positive definite jet matrices (no pivoting)."""
    n = len(b)
    A = [row[:] for row in A]
    b = b[:]
    inv = [None] * n
    for k in range(n):
        inv[k] = A[k][k].reciprocal()
        for i in range(k + 1, n):
            f = A[i][k] * inv[k]
            for j in range(k + 1, n):
                A[i][j] = A[i][j] - f * A[k][j]
            b[i] = b[i] - f * b[k]
    y = [None] * n
    for i in reversed(range(n)):
        acc = b[i]
        for j in range(i + 1, n):
            acc = acc - A[i][j] * y[j]
        y[i] = acc * inv[i]
    return y


def spray_coefficients(metric: Metric, x, xi) -> np.ndarray:
    """G^i = 1/4 g^{il} (d2(F^2)/dxi_l dx_m xi^m - d(F^2)/dx_l)."""
    x, xi = _broadcast(x, xi)
    n = x.shape[-1]
    L = _lagrangian(metric, x, xi, 2)
    H = L.hessian()
    g = 0.5 * H[..., n:, n:]
    M = H[..., n:, :n]
    rhs = np.einsum("...lm,...m->...l", M, xi) - L.gradient()[..., :n]
    return 0.25 * np.linalg.solve(g, rhs[..., None])[..., 0]


def spray_jet(metric: Metric, x, xi, order: int) -> list[Jet]:
    """The spray coefficients as jets of the given order in (x, xi)."""
    x, xi = _broadcast(x, xi)
    n = x.shape[-1]
    L = _lagrangian(metric, x, xi, order + 2)
    dL_dx = [L.derivative(m) for m in range(n)]
    dL_dxi = [L.derivative(n + l) for l in range(n)]
    xi_vars = Jet.variables(np.concatenate([x, xi], axis=-1), order)[n:]
    g = [[0.5 * dL_dxi[l].derivative(n + k) for k in range(n)] for l in range(n)]
    rhs = []
    for l in range(n):
        acc = -dL_dx[l].truncate(order)
        for m in range(n):
            acc = acc + dL_dxi[l].derivative(m) * xi_vars[m]
        rhs.append(acc)
    return [0.25 * y for y in _jet_solve(g, rhs)]


def spray(metric: Metric, x, xi) -> SprayJet:
    x, xi = _broadcast(x, xi)
    n = x.shape[-1]
    Gj = spray_jet(metric, x, xi, 2)
    G = np.stack([j.value for j in Gj], axis=-1)
    grads = np.stack([j.gradient() for j in Gj], axis=-2)
    hess = np.stack([j.hessian() for j in Gj], axis=-3)
    return SprayJet(
        G=G,
        dG_dx=grads[..., :n],
        dG_dxi=grads[..., n:],
        d2G_dxdxi=hess[..., :n, n:],
        d2G_dxi2=hess[..., n:, n:],
    )


def connection(metric: Metric, x, xi):
    """(G, N) with N[..., i, j] = dG^i/dxi_j."""
    x, xi = _broadcast(x, xi)
    n = x.shape[-1]
    Gj = spray_jet(metric, x, xi, 1)
    G = np.stack([j.value for j in Gj], axis=-1)
    N = np.stack([j.gradient()[..., n:] for j in Gj], axis=-2)
    return G, N


def _riemann_from(sj: SprayJet, xi) -> np.ndarray:
    return (2.0 * sj.dG_dx
            - np.einsum("...j,...ijk->...ik", xi, sj.d2G_dxdxi)
            + 2.0 * np.einsum("...j,...ijk->...ik", sj.G, sj.d2G_dxi2)
            - np.einsum("...ij,...jk->...ik", sj.dG_dxi, sj.dG_dxi))


def riemann_operator(metric: Metric, x, xi) -> np.ndarray:
    """Jacobi operator R_xi as a matrix R[..., i, k] (acts on column vectors)."""
    x, xi = _broadcast(x, xi)
    return _riemann_from(spray(metric, x, xi), xi)


def geometry(metric: Metric, x, xi):
    """(G, N, R) from a single spray jet."""
    x, xi = _broadcast(x, xi)
    sj = spray(metric, x, xi)
    return sj.G, sj.dG_dxi, _riemann_from(sj, xi)


# flags ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Flag:
    x: np.ndarray
    xi: np.ndarray
    eta: np.ndarray


def _g_inner(g, u, w):
    return np.einsum("...i,...ij,...j->...", u, g, w)


def flag_curvature(metric: Metric, x, xi, eta, tol: float = 1e-8) -> np.ndarray:
    """K(x, xi, eta) = g(R_xi eta, eta) / (g(xi,xi) g(eta,eta) - g(xi,eta)^2), g at (x, xi)."""
    x, xi = _broadcast(x, xi)
    eta = np.asarray(eta, dtype=float)
    g = fundamental_tensor(metric, x, xi)
    R = riemann_operator(metric, x, xi)
    gxx = _g_inner(g, xi, xi)
    gxe = _g_inner(g, xi, eta)
    gee = _g_inner(g, eta, eta)
    sin2 = 1.0 - gxe**2 / (gxx * gee)
    if np.any(sin2 < tol**2):
        raise DegenerateFlagError("flagpole and transverse edge are nearly parallel")
    perp = eta - (gxe / gxx)[..., None] * xi
    Rp = np.einsum("...ik,...k->...i", R, perp)
    return _g_inner(g, Rp, perp) / (gxx * _g_inner(g, perp, perp))


# trajectories --------------------------------------------------------------------------------


@dataclass
class GeodesicTrajectory:
    """Samples (t, x(t), x'(t)); ``valid`` flags batch members that stayed in the domain."""

    t: np.ndarray
    x: np.ndarray
    xdot: np.ndarray
    metric: Metric
    valid: np.ndarray | None = None

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def batch_shape(self) -> tuple:
        return self.x.shape[1:-1]

    def to_csv(self, handle=None) -> str:
        """Columns t, x_1..x_n, xi_1..xi_n; one row per sample (unbatched only)."""
        if self.x.ndim != 2:
            raise ValueError("CSV export needs a single (unbatched) trajectory")
        buf = handle if handle is not None else io.StringIO()
        n = self.x.shape[-1]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"xi_{i + 1}" for i in range(n)])
        for t, x, v in zip(self.t, self.x, self.xdot):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in v])
        return buf.getvalue() if handle is None else ""


@dataclass
class JacobiTrajectory:
    """Samples (t, J(t), DJ(t)); J has shape (steps + 1, *batch, k, n)."""

    t: np.ndarray
    J: np.ndarray
    DJ: np.ndarray
    geodesic: GeodesicTrajectory
    squeeze: bool = field(default=False, repr=False)


def _grid(T: float, step: float):
    nsteps = max(1, int(round(abs(T) / step)))
    return np.linspace(0.0, T, nsteps + 1), T / nsteps


def _integrate(metric: Metric, x0, xi0, T, step, order, extra0, extra_rhs,
               domain, on_exit, every=None, every_fn=None):
    """Joint RK4 for the geodesic state and optional transported quantities.

    ``order`` selects how much geometry each stage computes: 0 spray only,
    1 spray plus connection, 2 spray, connection and curvature.
    """
    x0, xi0 = _broadcast(x0, xi0)
    if extra0 is not None and on_exit != "raise":
        raise ValueError("transported quantities require on_exit='raise'")
    t, h = _grid(T, step)
    domain = domain or metric.admissible

    def geom(x, xi):
        if order == 0:
            return spray_coefficients(metric, x, xi), None, None
        if order == 1:
            G, N = connection(metric, x, xi)
            return G, N, None
        return geometry(metric, x, xi)

    def rhs(state):
        x, xi, e = state
        G, N, R = geom(x, xi)
        de = extra_rhs(x, xi, e, N, R) if e is not None else None
        return xi, -2.0 * G, de

    def axpy(state, k, c):
        return tuple(None if s is None else s + c * d for s, d in zip(state, k))

    xs = np.empty((len(t),) + x0.shape)
    vs = np.empty_like(xs)
    es = None if extra0 is None else np.empty((len(t),) + np.shape(extra0))
    state = (x0.copy(), xi0.copy(), None if extra0 is None else np.array(extra0, float))
    alive = np.ones(x0.shape[:-1], dtype=bool)
    for i in range(len(t)):
        xs[i], vs[i] = state[0], state[1]
        if es is not None:
            es[i] = state[2]
        if i == len(t) - 1:
            break
        k1 = rhs(state)
        k2 = rhs(axpy(state, k1, 0.5 * h))
        k3 = rhs(axpy(state, k2, 0.5 * h))
        k4 = rhs(axpy(state, k3, h))
        new = tuple(
            None if s is None else s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
        inside = np.asarray(domain(new[0]), dtype=bool) & alive
        if not inside.all():
            if on_exit == "raise":
                traj = GeodesicTrajectory(t[: i + 1], xs[: i + 1], vs[: i + 1], metric)
                raise ChartExitError(f"left the admissible domain at t={t[i + 1]:.6g}", traj)
            alive &= inside
            # frozen members keep their last valid state so stages stay evaluable
            keep = alive[..., None]
            new = (np.where(keep, new[0], state[0]), np.where(keep, new[1], state[1]), None)
            if not alive.any():
                xs[i + 1:], vs[i + 1:] = state[0], state[1]
                break
        state = new
        if every and every_fn is not None and (i + 1) % every == 0:
            state = (state[0], state[1], every_fn(state[0], state[1], state[2]))
    traj = GeodesicTrajectory(t, xs, vs, metric, alive)
    return traj, es


def integrate_geodesic(metric: Metric, x0, xi0, T: float, step: float = 1e-3,
                       require_unit: bool = True, domain: Callable | None = None,
                       on_exit: str = "raise") -> GeodesicTrajectory:
    """Fixed-step RK4 solution of x'' = -2 G(x, x').

    ``on_exit='freeze'`` keeps integrating the batch when some members leave
    ``domain``; those are flagged in ``trajectory.valid``.
    """
    x0, xi0 = _broadcast(x0, xi0)
    if require_unit:
        F0 = finsler_eval(metric, x0, xi0)
        if np.any(np.abs(F0 - 1.0) > 1e-9):
            raise ValueError("initial vector is not F-unit; pass require_unit=False to override")
    traj, _ = _integrate(metric, x0, xi0, T, step, 0, None, None, domain, on_exit)
    return traj


def _apply(M, v):
    # M (..., n, n) acting on v (..., k, n)
    return np.einsum("...ij,...kj->...ki", M, v)


def integrate_jacobi(metric: Metric, geodesic: GeodesicTrajectory, J0, DJ0) -> JacobiTrajectory:
    """RK4 for (J, DJ) with D(DJ) = -R(J), curvature recomputed at every stage.

    The geodesic is re-integrated jointly from its initial state on the same
    grid (stage points between samples are needed); ``J0`` may hold several
    fields, shape (*batch, k, n), or one, shape (*batch, n).
    """
    x0, xi0 = geodesic.x[0], geodesic.xdot[0]
    J0 = np.asarray(J0, dtype=float)
    DJ0 = np.asarray(DJ0, dtype=float)
    squeeze = J0.ndim == x0.ndim
    if squeeze:
        J0, DJ0 = J0[..., None, :], DJ0[..., None, :]
    J0, DJ0 = np.broadcast_arrays(J0, DJ0)

    def extra_rhs(x, xi, e, N, R):
        J, P = e[0], e[1]
        return np.stack([P - _apply(N, J), -_apply(R, J) - _apply(N, P)])

    T = float(geodesic.t[-1])
    traj, es = _integrate(metric, x0, xi0, T, geodesic.step, 2, np.stack([J0, DJ0]),
                          extra_rhs, None, "raise")
    return JacobiTrajectory(traj.t, es[:, 0], es[:, 1], traj, squeeze)


# finite differences along the time grid ---------------------------------------------------------


def _fornberg(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at z on nodes x."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def time_derivative(X, h: float, deriv: int = 1) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0 of a uniform grid.

    Central 5-point stencils inside, one-sided stencils at the two ends.
    """
    X = np.asarray(X, dtype=float)
    npts = X.shape[0]
    width = 4 + deriv  # points for 4th-order accuracy one-sided
    if npts < max(5, width):
        raise ValueError("need at least 5 samples (more for higher derivatives) for the stencil")
    out = np.empty_like(X)
    central = _fornberg(0.0, np.arange(-2.0, 3.0), deriv) / h**deriv
    out[2:-2] = sum(w * X[k: npts - 4 + k] for k, w in enumerate(central))
    for i in (0, 1):
        w = _fornberg(float(i), np.arange(float(width)), deriv) / h**deriv
        out[i] = np.tensordot(w, X[:width], axes=(0, 0))
        j = npts - 1 - i
        w = _fornberg(float(width - 1 - i), np.arange(float(width)), deriv) / h**deriv
        out[j] = np.tensordot(w, X[npts - width:], axes=(0, 0))
    return out


def _align_field(X, geo_shape):
    """Insert a field axis when X has one more axis than the geodesic."""
    X = np.asarray(X, dtype=float)
    extra = X.ndim - len(geo_shape)
    if extra not in (0, 1):
        raise ValueError("field shape does not match the geodesic")
    return X if extra == 1 else X[..., None, :], extra == 0


def covariant_derivative_along(geodesic: GeodesicTrajectory, X, N=None) -> np.ndarray:
    """(D X)^i = dX^i/dt + N^i_j(gamma, gamma') X^j at the samples."""
    Xk, squeezed = _align_field(X, geodesic.x.shape)
    if N is None:
        _, N = connection(geodesic.metric, geodesic.x, geodesic.xdot)
    D = time_derivative(Xk, geodesic.step) + _apply(N, Xk)
    return D[..., 0, :] if squeezed else D


def jacobi_residual(metric: Metric, jac: JacobiTrajectory, R=None, N=None) -> np.ndarray:
    """Norm of D(DJ) + R(J) at every sample, shape (steps + 1, *batch, k)."""
    geo = jac.geodesic
    if R is None or N is None:
        _, N, R = geometry(metric, geo.x, geo.xdot)
    DDJ = covariant_derivative_along(geo, jac.DJ, N)
    res = DDJ + _apply(R, jac.J)
    return np.linalg.norm(res, axis=-1)


def second_variation_residual(metric: Metric, jac: JacobiTrajectory) -> float:
    """Two-path check of 1/2 (g(J,J))'' = -K (g(c',c') g(J,J) - g(c',J)^2) + g(DJ, DJ).

    The left side is differentiated numerically from g(J, J) samples; the right
    side uses flag curvature and the transported DJ. Returns the largest
    discrepancy divided by the largest magnitude of the right side.
    """
    geo = jac.geodesic
    g = fundamental_tensor(metric, geo.x, geo.xdot)[..., None, :, :]
    v = geo.xdot[..., None, :]
    J, DJ = jac.J, jac.DJ
    gJJ = _g_inner(g, J, J)
    lhs = 0.5 * time_derivative(gJJ, geo.step, deriv=2)
    gvv = _g_inner(g, v, v)
    gvJ = _g_inner(g, v, J)
    area = gvv * gJJ - gvJ**2
    R = riemann_operator(metric, geo.x, geo.xdot)[..., None, :, :]
    perp = J - (gvJ / gvv)[..., None] * v
    Rp = np.einsum("...ik,...k->...i", R, perp)
    gpp = _g_inner(g, perp, perp)
    # flag curvature where the flag is nondegenerate; the product vanishes otherwise
    nondeg = area > 1e-16 * gvv * np.maximum(gJJ, 1e-300)
    K = np.where(nondeg, _g_inner(g, Rp, perp) / np.where(nondeg, gvv * gpp, 1.0), 0.0)
    rhs = -K * area + _g_inner(g, DJ, DJ)
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    return float(np.max(np.abs(lhs - rhs)) / scale)


# local symmetry --------------------------------------------------------------------------------


def _g_orthonormalize(g, E):
    """Modified Gram-Schmidt of frame E (..., k, n) in the inner product g (..., n, n)."""
    E = E.copy()
    k = E.shape[-2]
    for a in range(k):
        for b in range(a):
            E[..., a, :] -= _g_inner(g, E[..., a, :], E[..., b, :])[..., None] * E[..., b, :]
        E[..., a, :] /= np.sqrt(_g_inner(g, E[..., a, :], E[..., a, :]))[..., None]
    return E


def initial_frame(metric: Metric, x0, xi0) -> np.ndarray:
    """g-orthonormal frame at (x0, xi0) whose first vector is xi0 / F."""
    x0, xi0 = _broadcast(x0, xi0)
    n = x0.shape[-1]
    g = fundamental_tensor(metric, x0, xi0)
    E = np.broadcast_to(np.eye(n), x0.shape[:-1] + (n, n)).copy()
    # put xi0 first, then the coordinate vectors least aligned with it
    E = np.concatenate([xi0[..., None, :], E], axis=-2)
    out = np.empty(x0.shape[:-1] + (n, n))
    for idx in np.ndindex(*x0.shape[:-1]):
        basis = [E[idx][0]]
        for cand in E[idx][1:]:
            trial = np.array(basis + [cand])
            if np.linalg.matrix_rank(trial, tol=1e-10) == len(trial):
                basis.append(cand)
            if len(basis) == n:
                break
        out[idx] = np.array(basis)
    return _g_orthonormalize(g, out)


def parallel_frame(metric: Metric, geodesic: GeodesicTrajectory, reortho_every: int = 100):
    """Frame E_k with D E_k = 0 along the geodesic, re-g-orthonormalized periodically.

    Returns an array (steps + 1, *batch, n, n) indexed [..., k, component].
    """
    x0, xi0 = geodesic.x[0], geodesic.xdot[0]
    E0 = initial_frame(metric, x0, xi0)

    def extra_rhs(x, xi, E, N, R):
        return -_apply(N, E)

    def reortho(x, xi, E):
        return _g_orthonormalize(fundamental_tensor(metric, x, xi), E)

    T = float(geodesic.t[-1])
    _, Es = _integrate(metric, x0, xi0, T, geodesic.step, 1, E0, extra_rhs, None, "raise",
                       every=reortho_every, every_fn=reortho)
    return Es


def local_symmetry_profile(metric: Metric, geodesic: GeodesicTrajectory,
                           reortho_every: int = 100) -> np.ndarray:
    """g-norm of (D R)(E_k)(t) = D(R(E_k)) for a parallel frame, shape (steps+1, *batch, n)."""
    E = parallel_frame(metric, geodesic, reortho_every)
    _, N, R = geometry(metric, geodesic.x, geodesic.xdot)
    RE = _apply(R, E)
    DRE = time_derivative(RE, geodesic.step) + _apply(N, RE)
    g = fundamental_tensor(metric, geodesic.x, geodesic.xdot)[..., None, :, :]
    return np.sqrt(np.maximum(_g_inner(g, DRE, DRE), 0.0))


def local_symmetry_residual(metric: Metric, x0, xi0, T: float = 1.0, step: float = 1e-3,
                            reortho_every: int = 100) -> float:
    """Max over time, frame vectors and starts of |(D R)(E_k)|_g along unit geodesics."""
    geo = integrate_geodesic(metric, x0, xi0, T, step)
    return float(np.max(local_symmetry_profile(metric, geo, reortho_every)))


def jacobi_derivative_residual(metric: Metric, jac: JacobiTrajectory) -> float:
    """Jacobi-equation defect of DJ: D(D(DJ)) + R(DJ) = -(D R)(J), as a max norm."""
    geo = jac.geodesic
    _, N, R = geometry(metric, geo.x, geo.xdot)
    D3J = covariant_derivative_along(geo, -_apply(R, jac.J), N)
    res = D3J + _apply(R, jac.DJ)
    return float(np.max(np.linalg.norm(res, axis=-1)))


def shooting_jacobi(metric: Metric, x0, xi0, J0, DJ0, T: float, step: float = 1e-3,
                    eps: float = 1e-4) -> np.ndarray:
    """Jacobi field from a geodesic variation, independent of the curvature operator.

    Integrates the geodesics with initial data ``(x0 + s J0, xi0 + s (DJ0 - N J0))``
    for ``s = +eps, -eps`` and returns their central difference in ``s``, shape
    (steps + 1, *batch, n).
    """
    x0, xi0 = _broadcast(x0, xi0)
    J0 = np.broadcast_to(np.asarray(J0, dtype=float), x0.shape)
    DJ0 = np.broadcast_to(np.asarray(DJ0, dtype=float), x0.shape)
    _, N = connection(metric, x0, xi0)
    dxi = DJ0 - np.einsum("...ij,...j->...i", N, J0)
    xs = np.stack([x0 + eps * J0, x0 - eps * J0])
    vs = np.stack([xi0 + eps * dxi, xi0 - eps * dxi])
    traj = integrate_geodesic(metric, xs, vs, T, step, require_unit=False)
    return (traj.x[:, 0] - traj.x[:, 1]) / (2.0 * eps)
