"""Finsler metrics, wind fields and the Zermelo deformation.

Conventions used throughout:

* points ``x`` and tangent vectors ``xi`` are arrays of shape ``(..., n)``; every
  function broadcasts over the leading axes;
* a metric's ``evaluator(x, xi)`` receives *lists of components* (floats, arrays
  or :class:`~zermelo.jets.Jet`) so one formula serves plain evaluation and
  exact differentiation;
* the deformation translates the unit ball along ``+v``: the deformed norm
  ``r`` of ``zeta`` solves ``r = F(x, zeta - r v(x))``, admissible while
  ``F(x, -v(x)) < 1``.

Deformed-metric derivatives come in two argument conventions. The transfer
formulas (:func:`zermelo_gradient` and friends) take the *base* argument
``xi``: base-metric derivatives are evaluated at ``xi`` and the result belongs
to the deformed metric at ``translated_argument(base, wind, x, xi) = xi + F(x, xi) v``.
Direct evaluation (:func:`zermelo_eval`, or any generic operation applied to
:func:`zermelo`) takes the deformed argument ``zeta``; :func:`base_argument`
converts back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import jets
from .jets import Jet, value_of


class FinslerDomainError(ValueError):
    """A point lies outside the admissible region of a metric."""


class AdmissibilityError(FinslerDomainError):
    """The wind violates F(x, -v(x)) < 1."""


class ConvergenceError(RuntimeError):
    """The implicit Zermelo equation did not converge."""


class ConvexityError(ValueError):
    """The fundamental tensor is not positive definite."""


def split(a) -> list:
    a = np.asarray(a, dtype=float)
    return [a[..., k] for k in range(a.shape[-1])]


def _stack(comps) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*comps), axis=-1)


# wind fields -----------------------------------------------------------------------------


@dataclass(frozen=True)
class WindField:
    """A vector field ``v`` with optional closed-form flow and flow differential.

    ``field`` maps a list of coordinate components (floats, arrays or jets) to a
    list of vector components. ``flow(x, t)`` and ``differential(x, t, xi)``
    operate on arrays of shape ``(..., n)`` with ``t`` broadcasting against the
    leading axes.
    """

    dim: int
    field: Callable[[Sequence], list]
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    flow: Callable | None = None
    differential: Callable | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _stack([np.broadcast_to(c, x.shape[:-1]) for c in self.field(split(x))])

    def components(self, xs: Sequence) -> list:
        return self.field(list(xs))


def constant_wind(a: Sequence[float]) -> WindField:
    a = tuple(float(c) for c in a)

    def fld(xs):
        return [ak + 0.0 * value_of(xs[0]) for ak in a]

    def flow(x, t):
        return np.asarray(x, float) + np.asarray(t, float)[..., None] * np.asarray(a)

    def differential(x, t, xi):
        return np.broadcast_to(np.asarray(xi, float),
                               np.broadcast_shapes(np.shape(x), np.shape(xi),
                                                   np.shape(t) + (len(a),))).copy()

    return WindField(len(a), fld, "constant", {"a": list(a)}, flow, differential)


def _rotate(y, angle):
    y = np.array(y, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    y0, y1 = y[..., 0].copy(), y[..., 1].copy()
    shape = np.broadcast_shapes(y0.shape, np.shape(angle))
    out = np.broadcast_to(y, shape + y.shape[-1:]).copy()
    out[..., 0] = c * y0 - s * y1
    out[..., 1] = s * y0 + c * y1
    return out


def rotation_wind(omega: float, dim: int = 2, kind: str = "planar_rotation") -> WindField:
    """Infinitesimal rotation ``omega * (-x_2, x_1, 0, ...)`` of the first two
    coordinates. In the stereographic chart this is also the rotation of the
    sphere about its polar axis, hence the ``kind`` label is informational."""
    omega = float(omega)

    def fld(xs):
        zero = 0.0 * xs[0]
        return [-omega * xs[1], omega * xs[0]] + [zero for _ in xs[2:]]

    def flow(x, t):
        return _rotate(x, omega * np.asarray(t, float))

    def differential(x, t, xi):
        out = _rotate(xi, omega * np.asarray(t, float))
        return np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(x))).copy()

    return WindField(dim, fld, kind, {"omega": omega}, flow, differential)


def linear_wind(matrix) -> WindField:
    """``v(x) = A x``; used for non-Killing contrast fields. No closed-form flow."""
    A = np.asarray(matrix, dtype=float)
    n = A.shape[0]

    def fld(xs):
        return [sum(A[i, j] * xs[j] for j in range(n) if A[i, j] != 0.0) + 0.0 * xs[0]
                for i in range(n)]

    return WindField(n, fld, "linear", {"matrix": A.tolist()})


# metrics ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Metric:
    """A Finsler metric given by an evaluator of F in jet arithmetic."""

    dim: int
    evaluator: Callable[[Sequence, Sequence], object]
    kind: str = "custom"
    name: str = "custom"
    region: Callable[[np.ndarray], np.ndarray] | None = None
    base: "Metric | None" = None
    wind: WindField | None = None

    def admissible(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        if self.region is not None:
            ok &= np.asarray(self.region(x), dtype=bool)
        return ok

    def __call__(self, x, xi) -> np.ndarray:
        return finsler_eval(self, x, xi)


@dataclass(frozen=True)
class PointedVector:
    """Base point plus nonzero tangent vector."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if np.any(np.all(self.xi == 0, axis=-1)):
            raise ValueError("tangent vector must be nonzero")

    def __iter__(self):
        return iter((self.x, self.xi))


def sumsq(cs):
    acc = cs[0] * cs[0]
    for c in cs[1:]:
        acc = acc + c * c
    return acc


def _norm(xis):
    return jets.sqrt(sumsq(xis))


def euclidean(n: int = 2) -> Metric:
    return Metric(n, lambda xs, xis: _norm(xis), "riemannian", "euclidean")


def conformal(n: int, factor: Callable[[Sequence], object], name: str = "conformal",
              region: Callable | None = None) -> Metric:
    """Riemannian metric ``factor(x) * |xi|`` with a positive conformal factor."""
    return Metric(n, lambda xs, xis: factor(xs) * _norm(xis), "riemannian", name, region)


def sphere_factor(xs):
    return 2.0 / (1.0 + sumsq(xs))


def sphere_stereographic(n: int = 2) -> Metric:
    """Unit round sphere in the stereographic chart from the north pole."""
    return conformal(n, sphere_factor, "sphere_stereographic")


def perturbed_sphere(n: int = 2, eps: float = 0.1) -> Metric:
    """Sphere chart factor times ``(1 + eps * x_1)``: not locally symmetric."""

    def factor(xs):
        return sphere_factor(xs) * (1.0 + eps * xs[0])

    def region(x):
        return 1.0 + eps * x[..., 0] > 0.05

    return conformal(n, factor, f"perturbed_sphere(eps={eps})", region)


def finsler_eval(metric: Metric, x, xi) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.all(metric.admissible(x)):
        raise FinslerDomainError(f"point outside the admissible region of {metric.name}")
    return np.asarray(metric.evaluator(split(x), split(xi)), dtype=float)


def _xi_jet(metric: Metric, x, xi, order: int) -> Jet:
    """F as a jet in the tangent variables at fixed base point."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(x.shape, xi.shape)
    x = np.broadcast_to(x, shape)
    xi = np.broadcast_to(xi, shape)
    return metric.evaluator(split(x), Jet.variables(xi, order))


def base_derivatives(metric: Metric, x, xi):
    """(F, dF/dxi, d2F/dxi2) at (x, xi)."""
    F = _xi_jet(metric, x, xi, 2)
    return F.value, F.gradient(), F.hessian()


def fundamental_tensor(metric: Metric, x, xi, check: bool = True) -> np.ndarray:
    """g_ij = 1/2 d^2(F^2)/dxi_i dxi_j."""
    F = _xi_jet(metric, x, xi, 2)
    g = 0.5 * (F * F).hessian()
    if check:
        lam = np.linalg.eigvalsh(g)[..., 0]
        if np.any(lam <= 0):
            raise ConvexityError(f"fundamental tensor not positive definite (min eig {lam.min():.3e})")
    return g


def orthogonality_residual(metric: Metric, x, xi, U):
    """Return ``(g_(x,xi)(xi, U), F(x,xi) * dF_(x,xi)(U))``, which coincide."""
    F = _xi_jet(metric, x, xi, 2)
    g = 0.5 * (F * F).hessian()
    xi = np.asarray(xi, dtype=float)
    U = np.asarray(U, dtype=float)
    lhs = np.einsum("...i,...ij,...j->...", xi, g, U)
    rhs = F.value * np.einsum("...i,...i->...", F.gradient(), U)
    return lhs, rhs


# Zermelo deformation ----------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    max_value: float
    passed: bool
    worst_point: list


def check_admissible(base: Metric, wind: WindField, sample_points) -> AdmissibilityReport:
    pts = np.asarray(sample_points, dtype=float).reshape(-1, base.dim)
    vals = finsler_eval(base, pts, -wind(pts))
    i = int(np.argmax(vals))
    return AdmissibilityReport(float(vals[i]), bool(vals[i] < 1.0), pts[i].tolist())


def _solve(base: Metric, xs, xis, vs, tol: float = 1e-13, maxiter: int = 100) -> np.ndarray:
    """Safeguarded Newton for r = F(x, xi - r v) on plain arrays."""
    F0 = np.asarray(base.evaluator(xs, xis), dtype=float)
    Fmv = np.asarray(base.evaluator(xs, [-c for c in vs]), dtype=float)
    if np.any(~(Fmv < 1.0)):
        raise AdmissibilityError(f"admissibility violated: max F(x,-v) = {np.nanmax(Fmv):.6g}")
    shape = np.broadcast_shapes(F0.shape, Fmv.shape)
    F0 = np.broadcast_to(F0, shape)
    lo = np.zeros(shape)
    hi = F0 / (1.0 - Fmv)
    r = hi.copy()
    for _ in range(maxiter):
        # F is not differentiable at the zero vector; step off it by bisection
        at_zero = np.logical_and.reduce([a - r * b == 0 for a, b in zip(xis, vs)])
        if np.any(at_zero):
            r = np.where(at_zero, 0.5 * (lo + hi), r)
        s = Jet.variables(r[..., None], 1)[0]
        phi_j = base.evaluator(xs, [a - s * b for a, b in zip(xis, vs)]) - s
        phi = phi_j.value
        dphi = phi_j.coeffs[..., 1]
        done = np.abs(phi) <= tol * F0
        lo = np.where(phi > 0, r, lo)
        hi = np.where(phi <= 0, r, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = r - phi / dphi
        inside = (step >= lo) & (step <= hi) & np.isfinite(step)
        if done.all():
            # one polishing step once every residual is below tolerance
            return np.where(inside, step, r)
        r = np.where(inside, step, 0.5 * (lo + hi))
    raise ConvergenceError("Zermelo equation did not converge (wind near critical?)")


def _zermelo_evaluator(base: Metric, wind: WindField):
    def evaluate(xs, xis):
        vs = wind.components(xs)
        template = next((c for c in list(xs) + list(xis) if isinstance(c, Jet)), None)
        if template is None:
            return _solve(base, xs, xis, vs)
        x0 = [value_of(c) for c in xs]
        xi0 = [value_of(c) for c in xis]
        v0 = [value_of(c) for c in vs]
        r0 = _solve(base, x0, xi0, v0)
        s = Jet.variables(r0[..., None], 1)[0]
        dphi0 = (base.evaluator(x0, [a - s * b for a, b in zip(xi0, v0)]) - s).coeffs[..., 1]
        # chord iteration: each sweep fixes one more Taylor degree
        r = r0
        for _ in range(template.order):
            phi = base.evaluator(xs, [a - r * b for a, b in zip(xis, vs)]) - r
            r = r - phi / dphi0
        return r

    return evaluate


def zermelo(base: Metric, wind: WindField) -> Metric:
    """The Zermelo deformation of ``base`` by ``wind`` as a metric in its own right."""
    if wind.dim != base.dim:
        raise ValueError("wind and metric dimensions differ")

    def region(x):
        ok = base.admissible(x)
        xx = np.where(ok[..., None], x, 0.0)
        with np.errstate(all="ignore"):
            fmv = np.asarray(base.evaluator(split(xx), split(-wind(xx))), dtype=float)
        return ok & (fmv < 1.0)

    return Metric(base.dim, _zermelo_evaluator(base, wind), "zermelo",
                  f"zermelo({base.name}, {wind.kind})", region, base, wind)


def zermelo_eval(base: Metric, wind: WindField, x, xi) -> np.ndarray:
    """Deformed norm of ``xi`` at ``x`` (deformed-argument convention)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.all(base.admissible(x)):
        raise FinslerDomainError(f"point outside the admissible region of {base.name}")
    xs = split(x)
    return _solve(base, xs, split(xi), wind.components(xs))


def translated_argument(base: Metric, wind: WindField, x, xi) -> np.ndarray:
    """Deformed-metric argument paired with base argument ``xi``: xi + F(x, xi) v(x)."""
    return np.asarray(xi, float) + finsler_eval(base, x, xi)[..., None] * wind(x)


def base_argument(base: Metric, wind: WindField, x, zeta) -> np.ndarray:
    """Inverse of :func:`translated_argument`: zeta - F~(x, zeta) v(x)."""
    return np.asarray(zeta, float) - zermelo_eval(base, wind, x, zeta)[..., None] * wind(x)


def _transfer_parts(base, wind, x, xi):
    F, dF, H = base_derivatives(base, x, xi)
    v = wind(x)
    a = 1.0 + np.einsum("...i,...i->...", dF, v)
    if np.any(a <= 0):
        raise FloatingPointError("1 + v(F) <= 0; impossible for an admissible wind")
    Hv = np.einsum("...ij,...j->...i", H, v)
    vHv = np.einsum("...i,...i->...", Hv, v)
    return F, dF, H, a, Hv, vHv


def zermelo_gradient(base: Metric, wind: WindField, x, xi) -> np.ndarray:
    """dF~/dzeta at zeta = xi + F v, from base derivatives at xi: dF / (1 + v(F))."""
    _, dF, _, a, _, _ = _transfer_parts(base, wind, x, xi)
    return dF / a[..., None]


def _outer(u, w):
    return u[..., :, None] * w[..., None, :]


def zermelo_hessian(base: Metric, wind: WindField, x, xi, printed: bool = False) -> np.ndarray:
    """d^2F~/dzeta^2 at zeta = xi + F v, from base derivatives at xi.

    The full expression carries a ``v.H.v / (1+v(F))^3 dF (x) dF`` term. With
    ``printed=True`` it is dropped, which leaves a formula that is exact only
    on pairs of vectors annihilated by dF.
    """
    _, dF, H, a, Hv, vHv = _transfer_parts(base, wind, x, xi)
    a1 = a[..., None, None]
    out = H / a1 - (_outer(Hv, dF) + _outer(dF, Hv)) / a1**2
    if not printed:
        out = out + (vHv[..., None, None] / a1**3) * _outer(dF, dF)
    return out


def zermelo_fundamental(base: Metric, wind: WindField, x, xi, printed: bool = False) -> np.ndarray:
    """Deformed fundamental tensor at zeta = xi + F v, from base derivatives at xi.

    ``printed=True`` uses ``F~/(1+v(F)) g`` as leading term and omits the
    ``v.H.v`` correction; it agrees with the exact tensor on dF-null vectors.
    """
    F, dF, H, a, Hv, vHv = _transfer_parts(base, wind, x, xi)
    Ft = F  # F~(zeta) = F(xi) by construction
    a1 = a[..., None, None]
    f1 = Ft[..., None, None]
    dd = _outer(dF, dF)
    mixed = _outer(Hv, dF) + _outer(dF, Hv)
    if printed:
        g = F[..., None, None] * H + dd
        return f1 / a1 * g - f1 / a1**2 * mixed + dd / a1**2
    return f1 / a1 * H - f1 / a1**2 * mixed + (f1 * vHv[..., None, None] / a1**3 + 1.0 / a1**2) * dd


def randers_flat_closed_form(a, xi) -> np.ndarray:
    """Deformed Euclidean norm for the wind vector ``a`` at a point: positive root of
    r^2 (1 - |a|^2) + 2 r <xi, a> - |xi|^2 = 0."""
    a = np.asarray(a, float)
    xi = np.asarray(xi, float)
    aa = np.einsum("...i,...i->...", a, a)
    xa = np.einsum("...i,...i->...", xi, a)
    xx = np.einsum("...i,...i->...", xi, xi)
    lam = 1.0 - aa
    return xx / (xa + np.sqrt(xa * xa + lam * xx))
