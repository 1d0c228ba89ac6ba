"""Flows of wind fields, their differentials, Killing checks and the Noether integral."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geodesics import ChartExitError, GeodesicTrajectory
from .jets import Jet, is_jet
from .metrics import Metric, WindField, base_derivatives, finsler_eval

MODES = ("auto", "closed_form", "integrated")


def _check_mode(wind: WindField, mode: str) -> bool:
    """True when the closed form should be used."""
    if mode not in MODES:
        raise ValueError(f"unknown flow mode {mode!r}; expected one of {MODES}")
    if mode == "closed_form" and wind.flow is None:
        raise ValueError(f"wind of kind {wind.kind!r} has no closed-form flow")
    return mode != "integrated" and wind.flow is not None


def wind_jacobian(wind: WindField, x) -> np.ndarray:
    """Dv[..., i, j] = dv^i/dx^j from first-order jets."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    comps = wind.components(Jet.variables(x, 1))
    out = np.zeros(x.shape + (n,))
    for i, c in enumerate(comps):
        if is_jet(c):
            out[..., i, :] = c.gradient()
    return out


def _rk4_flow(wind: WindField, x, t, step, xi=None, domain=None):
    """Integrate x' = v(x) (and xi' = Dv xi when xi is given) over time t."""
    x = np.array(x, dtype=float)
    t = float(t)
    nsteps = max(1, int(round(abs(t) / step)))
    h = t / nsteps
    carry = xi is not None
    y = np.array(xi, dtype=float) if carry else None
    if carry:
        x, y = np.broadcast_arrays(x, y)
        x, y = x.copy(), y.copy()

    def rhs(x, y):
        v = wind(x)
        if not carry:
            return v, None
        return v, np.einsum("...ij,...j->...i", wind_jacobian(wind, x), y)

    for _ in range(nsteps):
        k1 = rhs(x, y)
        k2 = rhs(x + 0.5 * h * k1[0], None if y is None else y + 0.5 * h * k1[1])
        k3 = rhs(x + 0.5 * h * k2[0], None if y is None else y + 0.5 * h * k2[1])
        k4 = rhs(x + h * k3[0], None if y is None else y + h * k3[1])
        x = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        if carry:
            y = y + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if domain is not None and not np.all(domain(x)):
            raise ChartExitError("flow line left the chart domain")
    return x, y


def flow(wind: WindField, x, t, mode: str = "auto", step: float = 1e-3,
         domain: Callable | None = None) -> np.ndarray:
    """Psi_t(x): closed form when the wind registers one, otherwise RK4.

    Closed forms accept an array ``t`` broadcasting against the leading axes of
    ``x``; the integrated path needs a scalar ``t``.
    """
    if _check_mode(wind, mode):
        out = wind.flow(x, t)
        if domain is not None and not np.all(domain(out)):
            raise ChartExitError("flow line left the chart domain")
        return out
    return _rk4_flow(wind, x, t, step, domain=domain)[0]


def pushforward(wind: WindField, x, t, xi, mode: str = "auto", step: float = 1e-3,
                domain: Callable | None = None) -> np.ndarray:
    """Psi_{t*} xi at x: closed-form differential, else the variational equation."""
    if _check_mode(wind, mode) and wind.differential is not None:
        if domain is not None and not np.all(domain(wind.flow(x, t))):
            raise ChartExitError("flow line left the chart domain")
        return wind.differential(x, t, xi)
    return _rk4_flow(wind, x, t, step, xi=xi, domain=domain)[1]


@dataclass(frozen=True)
class FlowMap:
    """Psi_t for a fixed wind and time, usable as a point map."""

    wind: WindField
    t: float
    mode: str = "auto"
    step: float = 1e-3

    def __call__(self, x) -> np.ndarray:
        return flow(self.wind, x, self.t, self.mode, self.step)

    def pushforward(self, x, xi) -> np.ndarray:
        return pushforward(self.wind, x, self.t, xi, self.mode, self.step)

    def inverse(self) -> "FlowMap":
        return FlowMap(self.wind, -self.t, self.mode, self.step)

    def then(self, other: "FlowMap") -> "FlowMap":
        """Composition ``other o self`` (same wind)."""
        if other.wind is not self.wind:
            raise ValueError("flows of different winds do not compose into a flow")
        return FlowMap(self.wind, self.t + other.t, self.mode, self.step)


def killing_residual(metric: Metric, wind: WindField, x, xi, dt: float = 1e-5,
                     mode: str = "auto") -> float:
    """max |d/dt F(Psi_t x, Psi_{t*} xi)| / F at t = 0 by central differences."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    F0 = finsler_eval(metric, x, xi)
    vals = []
    for s in (dt, -dt):
        if _check_mode(wind, mode):
            xs, ys = flow(wind, x, s), pushforward(wind, x, s, xi)
        else:
            # one exact-time substep keeps the differencing free of step-size error
            xs, ys = _rk4_flow(wind, x, s, abs(s), xi=xi)
        vals.append(finsler_eval(metric, xs, ys))
    rate = (vals[0] - vals[1]) / (2.0 * dt)
    return float(np.max(np.abs(rate) / F0))


def noether_integral(metric: Metric, geodesic: GeodesicTrajectory, wind: WindField) -> np.ndarray:
    """v(F)(t) = sum_r v^r(gamma) dF/dxi_r(gamma, gamma') at every sample."""
    _, dF, _ = base_derivatives(metric, geodesic.x, geodesic.xdot)
    return np.einsum("...i,...i->...", wind(geodesic.x), dF)


def noether_drift(values) -> float:
    """max_t |q(t) - q(0)| / (1 + |q(0)|), per batch member reduced by max."""
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values - values[0]) / (1.0 + np.abs(values[0]))))


def arc_length_drift(geodesic: GeodesicTrajectory) -> float:
    """max_t |F(gamma, gamma') - F(0)| / F(0)."""
    F = finsler_eval(geodesic.metric, geodesic.x, geodesic.xdot)
    return float(np.max(np.abs(F - F[0]) / F[0]))


__all__ = [
    "FlowMap", "flow", "pushforward", "wind_jacobian", "killing_residual",
    "noether_integral", "noether_drift", "arc_length_drift",
]
