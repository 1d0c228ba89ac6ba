"""Declarative scenario configs: base metric, wind, domain, seeds, checks.

A scenario is a TOML document. Loading validates every field and the
admissibility of the wind on the declared domain, collecting all violations
into a single :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .metrics import (Metric, WindField, check_admissible, constant_wind, euclidean,
                      perturbed_sphere, rotation_wind, sphere_stereographic, zermelo)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONVENTION = "unit ball translated along +v; admissible iff F(x, -v) < 1"

CHECKS = ("geodesic_correspondence", "jacobi_correspondence", "flag_equality", "local_symmetry")

BASE_KINDS = ("euclidean", "sphere_stereographic", "conformal")
CONFORMAL_PROFILES = ("sphere", "perturbed_sphere")
WIND_KINDS = ("constant", "planar_rotation", "stereographic_rotation", "none")

# per-check defaults; every key is overridable from the config
DEFAULTS = {
    "geodesic_correspondence": {"n_starts": 20, "T": 1.0, "tol_distance": 1e-5,
                                "tol_unit_speed": 1e-6},
    "jacobi_correspondence": {"n_geodesics": 2, "n_fields": 10, "T": 1.0,
                              "tol_residual": 1e-4, "tol_orthogonality": 1e-5,
                              "tol_ratio": 1e-5},
    "flag_equality": {"n_flags": 100, "tol_difference": 1e-6, "min_sine": 1e-3,
                      "expected_curvature": None, "tol_expected": 1e-6},
    "local_symmetry": {"n_starts": 10, "T": 1.0, "tol_residual": 1e-4,
                       "contrast": None, "contrast_threshold": 1e-2},
}

GATE_DEFAULTS = {"n_samples": 200, "tol_killing": 1e-8}


class ConfigError(ValueError):
    """Scenario config failed validation; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n  - " + "\n  - ".join(self.errors))


@dataclass
class ScenarioConfig:
    name: str
    base: dict
    wind: dict
    domain: dict
    seeds: dict
    step: float
    checks: list
    check_params: dict
    gate: dict
    description: str = ""
    convention: str = CONVENTION
    source: str | None = field(default=None, compare=False)

    # builders ------------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return int(self.base.get("dim", 2))

    def base_metric(self) -> Metric:
        return build_base(self.base)

    def wind_field(self) -> WindField:
        return build_wind(self.wind, self.dim)

    def deformed_metric(self) -> Metric:
        return zermelo(self.base_metric(), self.wind_field())

    def in_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) <= self.domain["radius"]

    def params(self, check: str) -> dict:
        return self.check_params[check]

    def rng(self, purpose: str) -> np.random.Generator:
        return np.random.default_rng(int(self.seeds[purpose]))

    def to_dict(self) -> dict:
        return {
            "name": self.name, "description": self.description, "convention": self.convention,
            "base": self.base, "wind": self.wind, "domain": self.domain, "seeds": self.seeds,
            "integrator": {"step": self.step}, "gate": self.gate,
            "checks": {"order": list(self.checks), **copy.deepcopy(self.check_params)},
        }


def build_base(section: dict) -> Metric:
    n = int(section.get("dim", 2))
    kind = section["kind"]
    if kind == "euclidean":
        return euclidean(n)
    if kind == "sphere_stereographic":
        return sphere_stereographic(n)
    profile = section.get("profile", "sphere")
    if profile == "sphere":
        return sphere_stereographic(n)
    return perturbed_sphere(n, float(section.get("eps", 0.1)))


def build_wind(section: dict, dim: int) -> WindField:
    kind = section["kind"]
    if kind == "constant":
        return constant_wind(section["a"])
    if kind == "none":
        return constant_wind([0.0] * dim)
    return rotation_wind(float(section["omega"]), dim, kind)


def _domain_samples(radius: float, dim: int) -> np.ndarray:
    """Deterministic covering of the disk |x| <= radius (first two coordinates)."""
    r = radius * np.linspace(0.0, 1.0, 41)
    th = np.linspace(0.0, 2 * np.pi, 72, endpoint=False)
    R, TH = np.meshgrid(r, th)
    pts = np.zeros((R.size, dim))
    pts[:, 0] = (R * np.cos(TH)).ravel()
    if dim > 1:
        pts[:, 1] = (R * np.sin(TH)).ravel()
    return pts


def _number(errors, where, value, positive=True, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where}: expected a number, got {value!r}")
    elif positive and not value > 0:
        errors.append(f"{where}: must be positive, got {value!r}")


def parse(data: dict, source: str | None = None) -> ScenarioConfig:
    """Validate a decoded TOML mapping; raises ConfigError listing all problems."""
    errors: list[str] = []
    name = data.get("name")
    if not isinstance(name, str) or not name:
        errors.append("name: required non-empty string")
    convention = data.get("convention", CONVENTION)
    if convention != CONVENTION:
        errors.append(f"convention: only {CONVENTION!r} is supported")

    base = dict(data.get("base", {}))
    dim = base.get("dim", 2)
    if not isinstance(dim, int) or dim < 2:
        errors.append(f"base.dim: expected an integer >= 2, got {dim!r}")
        dim = 2
    base["dim"] = dim
    if base.get("kind") not in BASE_KINDS:
        errors.append(f"base.kind: expected one of {BASE_KINDS}, got {base.get('kind')!r}")
    elif base["kind"] == "conformal":
        if base.get("profile", "sphere") not in CONFORMAL_PROFILES:
            errors.append(f"base.profile: expected one of {CONFORMAL_PROFILES}")
        if "eps" in base:
            _number(errors, "base.eps", base["eps"])

    wind = dict(data.get("wind", {}))
    wk = wind.get("kind")
    if wk not in WIND_KINDS:
        errors.append(f"wind.kind: expected one of {WIND_KINDS}, got {wk!r}")
    elif wk == "constant":
        a = wind.get("a")
        if (not isinstance(a, list) or len(a) != dim
                or not all(isinstance(c, (int, float)) for c in a)):
            errors.append(f"wind.a: expected {dim} numbers, got {a!r}")
    elif wk in ("planar_rotation", "stereographic_rotation"):
        _number(errors, "wind.omega", wind.get("omega"))
        if (wk == "stereographic_rotation" and isinstance(wind.get("omega"), (int, float))
                and wind["omega"] >= 1.0):
            errors.append(f"wind.omega: admissibility violated: max F(x,-v) over the chart "
                          f"equals omega = {wind['omega']!r} >= 1")
        if wk == "stereographic_rotation" and base.get("kind") == "euclidean":
            errors.append("wind.kind: stereographic_rotation needs a stereographic sphere base")

    domain = dict(data.get("domain", {}))
    _number(errors, "domain.radius", domain.get("radius"))
    domain.setdefault("start_radius", domain.get("radius"))
    _number(errors, "domain.start_radius", domain.get("start_radius"))
    if (isinstance(domain.get("radius"), (int, float)) and isinstance(domain.get("start_radius"), (int, float))
            and domain["start_radius"] > domain["radius"]):
        errors.append("domain.start_radius: must not exceed domain.radius")

    seeds = dict(data.get("seeds", {}))
    for key in ("gate", "starts", "jacobi", "flags", "symmetry"):
        seeds.setdefault(key, 0)
        if isinstance(seeds[key], bool) or not isinstance(seeds[key], int) or seeds[key] < 0:
            errors.append(f"seeds.{key}: expected a non-negative integer")

    step = data.get("integrator", {}).get("step", 1e-3)
    _number(errors, "integrator.step", step)

    gate = {**GATE_DEFAULTS, **data.get("gate", {})}
    _number(errors, "gate.tol_killing", gate["tol_killing"])
    if not isinstance(gate["n_samples"], int) or gate["n_samples"] < 1:
        errors.append("gate.n_samples: expected a positive integer")

    checks_tbl = dict(data.get("checks", {}))
    order = checks_tbl.pop("order", list(CHECKS))
    if not isinstance(order, list):
        errors.append("checks.order: expected a list of check names")
        order = []
    for c in order:
        if c not in CHECKS:
            errors.append(f"checks.order: unknown check {c!r}")
    if len(set(order)) != len(order):
        errors.append("checks.order: a check may appear only once")
    params = {}
    for c in CHECKS:
        given = checks_tbl.pop(c, {})
        unknown = set(given) - set(DEFAULTS[c])
        if unknown:
            errors.append(f"checks.{c}: unknown keys {sorted(unknown)}")
        merged = {**DEFAULTS[c], **given}
        for k, v in merged.items():
            if k.startswith(("n_", "tol_", "T", "min_")):
                _number(errors, f"checks.{c}.{k}", v)
            if k.startswith("n_") and not isinstance(v, int):
                errors.append(f"checks.{c}.{k}: expected an integer")
        if merged.get("expected_curvature") is not None:
            _number(errors, f"checks.{c}.expected_curvature", merged["expected_curvature"], positive=False)
        contrast = merged.get("contrast")
        if contrast is not None and contrast not in CONFORMAL_PROFILES[1:]:
            errors.append(f"checks.{c}.contrast: expected 'perturbed_sphere' or nothing")
        params[c] = merged
    for extra in checks_tbl:
        errors.append(f"checks: unknown table {extra!r}")

    if errors:
        raise ConfigError(errors)

    cfg = ScenarioConfig(
        name=name, base=base, wind=wind, domain=domain, seeds=seeds, step=float(step),
        checks=list(order), check_params=params, gate=gate,
        description=str(data.get("description", "")), convention=convention, source=source,
    )
    _check_domain(cfg)
    return cfg


def _check_domain(cfg: ScenarioConfig) -> None:
    """Admissibility of the base metric and the wind on the declared domain."""
    base = cfg.base_metric()
    pts = _domain_samples(cfg.domain["radius"], cfg.dim)
    if not np.all(base.admissible(pts)):
        raise ConfigError([f"domain: radius {cfg.domain['radius']} leaves the region of {base.name}"])
    rep = check_admissible(base, cfg.wind_field(), pts)
    if not rep.passed:
        raise ConfigError([f"wind: admissibility violated: max F(x,-v) = {rep.max_value:.6g} "
                           f"at x = {rep.worst_point}"])


def bundled() -> list[str]:
    """Names of the scenarios shipped with the package."""
    files = resources.files("zermelo") / "data"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def load(path_or_name) -> ScenarioConfig:
    """Load a scenario from a TOML path or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.suffix == ".toml" and p.exists():
        with p.open("rb") as fh:
            return parse(tomllib.load(fh), str(p))
    name = p.stem if p.suffix == ".toml" else str(path_or_name)
    res = resources.files("zermelo") / "data" / f"{name}.toml"
    if not res.is_file():
        raise FileNotFoundError(f"no scenario file {path_or_name!r} and no bundled scenario "
                                f"{name!r} (bundled: {', '.join(bundled())})")
    return parse(tomllib.loads(res.read_text()), f"bundled:{name}")


def loads(text: str) -> ScenarioConfig:
    return parse(tomllib.loads(text))
