"""Verification drivers: run the enabled checks of a scenario and build a report.

Every driver compares a computation on the base metric, transported by the
wind's flow, with an independent computation on the deformed metric.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import jets
from .flows import flow, killing_residual, noether_integral, pushforward
from .geodesics import (GeodesicTrajectory, _g_inner, covariant_derivative_along,
                        flag_curvature, geometry, integrate_geodesic, integrate_jacobi,
                        local_symmetry_residual)
from .metrics import (Metric, WindField, check_admissible, finsler_eval, fundamental_tensor,
                      perturbed_sphere, translated_argument)
from .scenarios import ScenarioConfig, _domain_samples

log = logging.getLogger(__name__)

REFERENCES = {
    "gate": "flow of v preserves F; F(x, -v(x)) < 1 on the domain",
    "geodesic_correspondence": "t -> Psi_t(gamma(t)) is a unit-speed geodesic of F~ for every unit F-geodesic gamma",
    "jacobi_correspondence": "Psi_t* J is a Jacobi field of F~ for g-orthogonal Jacobi J; "
                             "g~(J~, J~) / g(J, J) = F~ / (1 + v(F))",
    "flag_equality": "K(x, xi, eta) = K~(x, xi + v, eta) for F(x, xi) = 1",
    "local_symmetry": "D R = 0 along geodesics of F implies the same for F~",
}


@dataclass
class CheckRecord:
    name: str
    reference: str
    measured: dict
    tolerance: dict
    passed: bool
    runtime_s: float = 0.0
    details: dict = field(default_factory=dict)
    expected_fail: dict | None = None
    error: str | None = None


@dataclass
class VerificationReport:
    scenario: str
    config: dict
    environment: dict
    gate: dict
    records: list = field(default_factory=list)
    status: str = "running"
    runtime_s: float = 0.0

    @property
    def overall_pass(self) -> bool:
        return (self.status == "complete" and bool(self.gate.get("passed"))
                and all(r.passed for r in self.records))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config": self.config,
            "environment": self.environment,
            "gate": self.gate,
            "records": [asdict(r) for r in self.records],
            "status": self.status,
            "overall_pass": self.overall_pass,
            "runtime_s": self.runtime_s,
        }


def _pass(measured: dict, tolerance: dict) -> bool:
    return all(measured[k] < tol for k, tol in tolerance.items())


# sampling ------------------------------------------------------------------------------


def sample_points(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the ball |x| <= radius."""
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return r * u


def unit_vectors(metric: Metric, rng: np.random.Generator, x) -> np.ndarray:
    """Random directions at x scaled to F-length one."""
    u = rng.normal(size=np.shape(x))
    return u / finsler_eval(metric, x, u)[..., None]


def sample_starts(cfg: ScenarioConfig, metric: Metric, rng: np.random.Generator, n: int,
                  T: float, max_rounds: int = 10) -> GeodesicTrajectory:
    """n unit geodesics of ``metric`` starting in the start ball and staying in the domain.

    Candidates are integrated as a batch with out-of-domain members frozen; the
    first n survivors (in draw order) are kept.
    """
    kept_x, kept_v = [], []

    def domain(x):
        return cfg.in_domain(x) & metric.admissible(x)

    for _ in range(max_rounds):
        m = 2 * n
        x0 = sample_points(rng, m, cfg.dim, cfg.domain["start_radius"])
        xi0 = unit_vectors(metric, rng, x0)
        traj = integrate_geodesic(metric, x0, xi0, T, cfg.step, domain=domain, on_exit="freeze")
        for i in np.flatnonzero(traj.valid):
            kept_x.append(traj.x[:, i])
            kept_v.append(traj.xdot[:, i])
        if len(kept_x) >= n:
            xs = np.stack(kept_x[:n], axis=1)
            vs = np.stack(kept_v[:n], axis=1)
            return GeodesicTrajectory(traj.t, xs, vs, metric, np.ones(n, dtype=bool))
    raise RuntimeError(f"could not find {n} geodesics staying in the domain over T={T}")


def _flow_along(wind: WindField, t, x) -> np.ndarray:
    """Psi_t applied samplewise, t on axis 0."""
    tt = np.asarray(t, dtype=float).reshape((-1,) + (1,) * (np.ndim(x) - 2))
    if wind.flow is not None:
        return flow(wind, x, tt)
    return np.stack([flow(wind, xk, float(tk)) for tk, xk in zip(t, x)])


def _push_along(wind: WindField, t, x, xi) -> np.ndarray:
    extra = np.ndim(xi) - np.ndim(x)
    tt = np.asarray(t, dtype=float).reshape((-1,) + (1,) * (np.ndim(x) - 2 + extra))
    xx = x.reshape(x.shape[:-1] + (1,) * extra + x.shape[-1:])
    if wind.differential is not None:
        return pushforward(wind, xx, tt, xi)
    return np.stack([pushforward(wind, xk, float(tk), vk) for tk, xk, vk in zip(t, xx, xi)])


def map_geodesic(base_geo: GeodesicTrajectory, wind: WindField, deformed: Metric) -> GeodesicTrajectory:
    """t -> Psi_t(gamma(t)) with velocity v + Psi_t* gamma'(t)."""
    xm = _flow_along(wind, base_geo.t, base_geo.x)
    vm = _push_along(wind, base_geo.t, base_geo.x, base_geo.xdot) + wind(xm)
    return GeodesicTrajectory(base_geo.t, xm, vm, deformed, base_geo.valid)


# gate ----------------------------------------------------------------------------------


def run_gate(cfg: ScenarioConfig) -> dict:
    base, wind = cfg.base_metric(), cfg.wind_field()
    adm = check_admissible(base, wind, _domain_samples(cfg.domain["radius"], cfg.dim))
    rng = cfg.rng("gate")
    x = sample_points(rng, cfg.gate["n_samples"], cfg.dim, cfg.domain["radius"])
    xi = unit_vectors(base, rng, x)
    kres = killing_residual(base, wind, x, xi)
    tol = cfg.gate["tol_killing"]
    return {
        "reference": REFERENCES["gate"],
        "admissibility_max": adm.max_value,
        "admissibility_passed": adm.passed,
        "killing_residual": kres,
        "killing_tolerance": tol,
        "killing_passed": kres < tol,
        "passed": bool(adm.passed and kres < tol),
    }


# checks --------------------------------------------------------------------------------


def verify_geodesic_correspondence(cfg: ScenarioConfig, curves_dir: Path | None = None) -> CheckRecord:
    p = cfg.params("geodesic_correspondence")
    base, wind, deformed = cfg.base_metric(), cfg.wind_field(), cfg.deformed_metric()
    geo = sample_starts(cfg, base, cfg.rng("starts"), p["n_starts"], p["T"])
    mapped = map_geodesic(geo, wind, deformed)
    direct = integrate_geodesic(deformed, mapped.x[0], mapped.xdot[0], p["T"], cfg.step)
    dist = float(np.max(np.linalg.norm(direct.x - mapped.x, axis=-1)))
    speed = float(np.max(np.abs(finsler_eval(deformed, mapped.x, mapped.xdot) - 1.0)))
    if curves_dir is not None:
        curves_dir.mkdir(parents=True, exist_ok=True)
        for label, tr in (("base", geo), ("mapped", mapped), ("deformed", direct)):
            single = GeodesicTrajectory(tr.t, tr.x[:, 0], tr.xdot[:, 0], tr.metric)
            (curves_dir / f"{cfg.name}_geodesic_{label}.csv").write_text(single.to_csv())
    measured = {"sup_distance": dist, "unit_speed_defect": speed}
    tol = {"sup_distance": p["tol_distance"], "unit_speed_defect": p["tol_unit_speed"]}
    return CheckRecord("geodesic_correspondence", REFERENCES["geodesic_correspondence"],
                       measured, tol, _pass(measured, tol),
                       details={"n_starts": p["n_starts"], "T": p["T"]})


def _normal_fields(metric: Metric, x0, xi0, rng, k: int):
    """k random pairs (J0, DJ0), g-orthogonal to xi0, with g(J0,J0) + g(DJ0,DJ0) = 1."""
    g = fundamental_tensor(metric, x0, xi0)
    m, n = x0.shape
    raw = rng.normal(size=(2, m, k, n))
    gx = np.einsum("mij,mj->mi", g, xi0)
    gxx = np.einsum("mi,mi->m", gx, xi0)
    raw -= (np.einsum("smki,mi->smk", raw, gx) / gxx[None, :, None])[..., None] * xi0[None, :, None, :]
    gm = g[None, :, None]
    size = _g_inner(gm, raw, raw).sum(axis=0)
    raw /= np.sqrt(size)[None, ..., None]
    return raw[0], raw[1]


def jacobi_transfer_defects(base: Metric, wind: WindField, deformed: Metric,
                            geo: GeodesicTrajectory, J0, DJ0) -> dict:
    """Residual, orthogonality and length-ratio defects of pushed-forward Jacobi fields."""
    jac = integrate_jacobi(base, geo, J0, DJ0)
    t = jac.t
    mapped = map_geodesic(jac.geodesic, wind, deformed)
    Jm = _push_along(wind, t, jac.geodesic.x, jac.J)
    _, Nm, Rm = geometry(deformed, mapped.x, mapped.xdot)
    DJm = covariant_derivative_along(mapped, Jm, Nm)
    DDJm = covariant_derivative_along(mapped, DJm, Nm)
    res = np.linalg.norm(DDJm + np.einsum("...ij,...kj->...ki", Rm, Jm), axis=-1)
    gm = fundamental_tensor(deformed, mapped.x, mapped.xdot)[..., None, :, :]
    ortho = np.abs(_g_inner(gm, mapped.xdot[..., None, :], Jm))
    g = fundamental_tensor(base, jac.geodesic.x, jac.geodesic.xdot)[..., None, :, :]
    gJJ = _g_inner(g, jac.J, jac.J)
    gJJm = _g_inner(gm, Jm, Jm)
    vF0 = noether_integral(base, jac.geodesic, wind)[0]
    Ft0 = finsler_eval(deformed, mapped.x[0], mapped.xdot[0])
    c = (Ft0 / (1.0 + vF0))[..., None]
    ratio = np.max(np.abs(gJJm - c * gJJ), axis=0) / np.max(gJJ, axis=0)
    return {
        "residual": float(np.max(res)),
        "orthogonality_defect": float(np.max(ortho)),
        "ratio_defect": float(np.max(ratio)),
    }


def verify_jacobi_correspondence(cfg: ScenarioConfig) -> CheckRecord:
    p = cfg.params("jacobi_correspondence")
    base, wind, deformed = cfg.base_metric(), cfg.wind_field(), cfg.deformed_metric()
    rng = cfg.rng("jacobi")
    ng = p["n_geodesics"]
    per = -(-p["n_fields"] // ng)
    geo = sample_starts(cfg, base, rng, ng, p["T"])
    J0, DJ0 = _normal_fields(base, geo.x[0], geo.xdot[0], rng, per)
    measured = jacobi_transfer_defects(base, wind, deformed, geo, J0, DJ0)
    tol = {"residual": p["tol_residual"], "orthogonality_defect": p["tol_orthogonality"],
           "ratio_defect": p["tol_ratio"]}
    return CheckRecord("jacobi_correspondence", REFERENCES["jacobi_correspondence"],
                       measured, tol, _pass(measured, tol),
                       details={"n_geodesics": ng, "n_fields": ng * per, "T": p["T"]})


def sample_flags(cfg: ScenarioConfig, base: Metric, deformed: Metric, wind: WindField,
                 rng: np.random.Generator, n: int, min_sine: float):
    """n flags (x, xi, eta), F(x, xi) = 1, nondegenerate for both g and g~."""
    xs, xis, etas = [], [], []
    while len(xs) < n:
        x = sample_points(rng, n, cfg.dim, cfg.domain["start_radius"])
        xi = unit_vectors(base, rng, x)
        eta = rng.normal(size=x.shape)
        ok = np.ones(n, dtype=bool)
        for metric, pole in ((base, xi), (deformed, translated_argument(base, wind, x, xi))):
            g = fundamental_tensor(metric, x, pole)
            gpe = _g_inner(g, pole, eta)
            sin2 = 1.0 - gpe**2 / (_g_inner(g, pole, pole) * _g_inner(g, eta, eta))
            ok &= sin2 > min_sine**2
        for i in np.flatnonzero(ok):
            xs.append(x[i]), xis.append(xi[i]), etas.append(eta[i])
    return np.array(xs[:n]), np.array(xis[:n]), np.array(etas[:n])


def verify_flag_equality(cfg: ScenarioConfig, n_flags: int | None = None) -> CheckRecord:
    p = cfg.params("flag_equality")
    n = n_flags or p["n_flags"]
    base, wind, deformed = cfg.base_metric(), cfg.wind_field(), cfg.deformed_metric()
    x, xi, eta = sample_flags(cfg, base, deformed, wind, cfg.rng("flags"), n, p["min_sine"])
    K = flag_curvature(base, x, xi, eta)
    Kt = flag_curvature(deformed, x, translated_argument(base, wind, x, xi), eta)
    measured = {"max_difference": float(np.max(np.abs(K - Kt)))}
    tol = {"max_difference": p["tol_difference"]}
    if p["expected_curvature"] is not None:
        measured["max_deviation_from_expected"] = float(np.max(np.abs(Kt - p["expected_curvature"])))
        tol["max_deviation_from_expected"] = p["tol_expected"]
    return CheckRecord("flag_equality", REFERENCES["flag_equality"], measured, tol,
                       _pass(measured, tol),
                       details={"n_flags": n, "expected_curvature": p["expected_curvature"],
                                "K_range": [float(K.min()), float(K.max())]})


def verify_local_symmetry(cfg: ScenarioConfig) -> CheckRecord:
    p = cfg.params("local_symmetry")
    base, wind, deformed = cfg.base_metric(), cfg.wind_field(), cfg.deformed_metric()
    rng = cfg.rng("symmetry")
    geo = sample_starts(cfg, base, rng, p["n_starts"], p["T"])
    x0, xi0 = geo.x[0], geo.xdot[0]
    base_res = local_symmetry_residual(base, x0, xi0, p["T"], cfg.step)
    measured = {"base_residual": base_res}
    tol = {"base_residual": p["tol_residual"]}
    details = {"n_starts": p["n_starts"], "T": p["T"]}
    if base_res < p["tol_residual"]:
        zeta0 = translated_argument(base, wind, x0, xi0)
        measured["deformed_residual"] = local_symmetry_residual(deformed, x0, zeta0, p["T"], cfg.step)
    else:
        details["skipped"] = "base metric is not locally symmetric; deformed check not run"
        measured["deformed_residual"] = float("inf")
    tol["deformed_residual"] = p["tol_residual"]
    passed = _pass(measured, tol)
    expected_fail = None
    if p["contrast"] is not None:
        control = perturbed_sphere(cfg.dim)
        xc = x0[:2]
        u = xi0[:2] / finsler_eval(control, xc, xi0[:2])[..., None]
        value = local_symmetry_residual(control, xc, u, p["T"], cfg.step)
        detected = value > p["contrast_threshold"]
        expected_fail = {"metric": control.name, "residual": value,
                         "threshold": p["contrast_threshold"], "detected": bool(detected)}
        passed = passed and detected
    return CheckRecord("local_symmetry", REFERENCES["local_symmetry"], measured, tol, passed,
                       details=details, expected_fail=expected_fail)


DRIVERS = {
    "geodesic_correspondence": verify_geodesic_correspondence,
    "jacobi_correspondence": verify_jacobi_correspondence,
    "flag_equality": verify_flag_equality,
    "local_symmetry": verify_local_symmetry,
}


# run and emit --------------------------------------------------------------------------


def run(cfg: ScenarioConfig, out: Path | str | None = None, fmt: str = "json",
        curves_dir: Path | str | None = None) -> VerificationReport:
    """Run the gate and then the enabled checks in declared order.

    With ``out`` set the report is rewritten after every step, so an abort
    leaves a partial report whose ``status`` marks the failure.
    """
    t_start = time.perf_counter()
    env = {"step": cfg.step, "seeds": dict(cfg.seeds), "jet_backend": jets.BACKEND}
    report = VerificationReport(cfg.name, cfg.to_dict(), env, gate={})

    def flush():
        report.runtime_s = time.perf_counter() - t_start
        if out is not None:
            emit(report, out, fmt)

    report.gate = run_gate(cfg)
    if not report.gate["passed"]:
        report.status = "gate_failed"
        flush()
        return report
    flush()
    for name in cfg.checks:
        t0 = time.perf_counter()
        kwargs = {"curves_dir": Path(curves_dir)} if (curves_dir and name == "geodesic_correspondence") else {}
        try:
            rec = DRIVERS[name](cfg, **kwargs)
        except Exception as exc:  # record and stop; the partial report says why
            log.exception("check %s aborted", name)
            rec = CheckRecord(name, REFERENCES[name], {}, {}, False,
                              error=f"{type(exc).__name__}: {exc}")
            rec.runtime_s = time.perf_counter() - t0
            report.records.append(rec)
            report.status = "aborted"
            flush()
            return report
        rec.runtime_s = time.perf_counter() - t0
        log.info("%s: %s (%.1fs)", name, "pass" if rec.passed else "FAIL", rec.runtime_s)
        report.records.append(rec)
        flush()
    report.status = "complete"
    flush()
    return report


def _strip_runtime(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtime(v) for k, v in obj.items() if k != "runtime_s"}
    if isinstance(obj, list):
        return [_strip_runtime(v) for v in obj]
    return obj


def report_json(report: VerificationReport, include_runtime: bool = True) -> str:
    d = report.to_dict()
    if not include_runtime:
        d = _strip_runtime(d)
    return json.dumps(d, indent=2, sort_keys=True, allow_nan=True) + "\n"


def report_csv(report: VerificationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "check", "quantity", "measured", "tolerance", "passed"])
    g = report.gate
    if g:
        w.writerow([report.scenario, "gate", "killing_residual", repr(g["killing_residual"]),
                    repr(g["killing_tolerance"]), g["killing_passed"]])
        w.writerow([report.scenario, "gate", "admissibility_max", repr(g["admissibility_max"]),
                    "1.0", g["admissibility_passed"]])
    for r in report.records:
        for k, val in r.measured.items():
            tol = r.tolerance.get(k)
            w.writerow([report.scenario, r.name, k, repr(val), repr(tol),
                        val < tol if tol is not None else ""])
        if r.expected_fail:
            e = r.expected_fail
            w.writerow([report.scenario, r.name, "contrast_residual_expected_above",
                        repr(e["residual"]), repr(e["threshold"]), e["detected"]])
        if r.error:
            w.writerow([report.scenario, r.name, "error", r.error, "", False])
    w.writerow([report.scenario, "overall", report.status, "", "", report.overall_pass])
    return buf.getvalue()


def emit(report: VerificationReport, path: Path | str, fmt: str = "json") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path
