"""Experiment configuration: schema, defaults and validation.

Config files are YAML (JSON is accepted as a subset)::

    scenario: ou-jump              # required; see `levy-picard list-scenarios`
    params: {a: 1.0, sigma: 0.3}   # scenario parameters (optional)
    modulus:                       # optional override of the declared modulus
      name: log                    # see `levy-picard list-moduli`
      lam: 1.0                     # constant, or {times: [...], values: [...]}
      params: {}
    grid: {T: 1.0, M: 1024}        # M must be a power of two
    paths: 1000                    # >= 2
    seed: 0                        # 64-bit unsigned
    max_iter: 50
    min_iter: 0
    tolerances: {solver: 1.0e-6, quadrature: 1.0e-9, assumption1: 1.0e-9}
    diagnostics:
      assumption1: true
      osgood: true
      moment_bound: true
      cauchy: true
      uniqueness: false
      analytic_mean: false
      stability: {eps: [0.1, 1.0]} # or a bare list; empty disables
    sampler: {pairs: 4096, box_radius: 10.0, near_origin_fraction: 0.5}
    output: results                # default: $LEVY_PICARD_OUT or ./results

Validation collects every problem before reporting.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .moduli import MODULI
from .scenarios import SCENARIOS

__all__ = ["ExperimentConfig", "Diagnostics", "parse_config", "validate_config", "load_raw", "OUTPUT_ENV"]

OUTPUT_ENV = "LEVY_PICARD_OUT"

_TOP_KEYS = {"scenario", "params", "modulus", "grid", "paths", "seed", "max_iter", "min_iter",
             "tolerances", "diagnostics", "sampler", "output"}
_DIAG_FLAGS = ("assumption1", "osgood", "moment_bound", "cauchy", "uniqueness", "analytic_mean")
_SAMPLER_KEYS = {"pairs", "box_radius", "near_origin_fraction", "near_diagonal_fraction",
                 "min_scale", "seed"}


@dataclass
class Diagnostics:
    assumption1: bool = True
    osgood: bool = True
    moment_bound: bool = True
    cauchy: bool = True
    uniqueness: bool = False
    analytic_mean: bool = False
    stability_eps: list = field(default_factory=list)

    def enabled(self) -> list[str]:
        names = [n for n in _DIAG_FLAGS if getattr(self, n)]
        if self.stability_eps:
            names.append("stability")
        return names


@dataclass
class ExperimentConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    modulus: dict | None = None
    horizon: float = 1.0
    steps: int = 1024
    paths: int = 1000
    seed: int = 0
    max_iter: int = 50
    min_iter: int = 0
    solver_tol: float = 1e-6
    quadrature_tol: float = 1e-9
    assumption1_tol: float = 1e-9
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    sampler: dict = field(default_factory=dict)
    output: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _num(errors, where, value, kind=float, positive=False, nonneg=False):
    if isinstance(value, bool):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    try:
        # YAML 1.1 reads "1e-6" as a string.
        out = kind(float(value)) if kind is int else kind(value)
    except (TypeError, ValueError):
        errors.append(f"{where}: expected {'an integer' if kind is int else 'a number'}, got {value!r}")
        return None
    if kind is int and float(value) != out:
        errors.append(f"{where}: expected an integer, got {value!r}")
        return None
    if kind is float and not math.isfinite(out):
        errors.append(f"{where}: must be finite, got {value!r}")
        return None
    if positive and not out > 0:
        errors.append(f"{where}: must be > 0, got {value!r}")
    if nonneg and out < 0:
        errors.append(f"{where}: must be >= 0, got {value!r}")
    return out


def validate_config(raw) -> ExperimentConfig:
    """Validate a parsed mapping; raise :class:`ConfigError` listing all problems."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown field (known: {sorted(_TOP_KEYS)})")

    scenario = raw.get("scenario")
    if scenario is None:
        errors.append("scenario: required")
    elif scenario not in SCENARIOS:
        errors.append(f"scenario: unknown scenario {scenario!r}; available: {sorted(SCENARIOS)}")

    params = raw.get("params") or {}
    if not isinstance(params, dict):
        errors.append("params: must be a mapping")
        params = {}
    elif scenario in SCENARIOS:
        for k in sorted(set(params) - set(SCENARIOS[scenario].defaults)):
            errors.append(f"params.{k}: not a parameter of {scenario!r} "
                          f"(accepted: {sorted(SCENARIOS[scenario].defaults)})")

    modulus = raw.get("modulus")
    if modulus is not None:
        if isinstance(modulus, str):
            modulus = {"name": modulus}
        if not isinstance(modulus, dict) or "name" not in modulus:
            errors.append("modulus: must be a name or a mapping with 'name'")
            modulus = None
        elif modulus["name"] not in MODULI:
            errors.append(f"modulus.name: unknown modulus {modulus['name']!r}; available: {sorted(MODULI)}")
        else:
            modulus = {"name": modulus["name"], "lam": modulus.get("lam", 1.0),
                       "params": dict(modulus.get("params") or {})}

    grid = raw.get("grid") or {}
    horizon = _num(errors, "grid.T", grid.get("T", 1.0), positive=True)
    steps = _num(errors, "grid.M", grid.get("M", 1024), kind=int, positive=True)
    if steps is not None and steps > 0 and steps & (steps - 1):
        errors.append(f"grid.M: must be a power of two, got {steps}")
    paths = _num(errors, "paths", raw.get("paths", 1000), kind=int)
    if paths is not None and paths < 2:
        errors.append(f"paths: must be >= 2, got {paths}")
    seed = _num(errors, "seed", raw.get("seed", 0), kind=int, nonneg=True)
    if seed is not None and seed >= 2**64:
        errors.append("seed: must fit in 64 bits")
    max_iter = _num(errors, "max_iter", raw.get("max_iter", 50), kind=int, nonneg=True)
    min_iter = _num(errors, "min_iter", raw.get("min_iter", 0), kind=int, nonneg=True)

    tols = raw.get("tolerances") or {}
    solver_tol = _num(errors, "tolerances.solver", tols.get("solver", 1e-6), positive=True)
    quad_tol = _num(errors, "tolerances.quadrature", tols.get("quadrature", 1e-9), positive=True)
    a1_tol = _num(errors, "tolerances.assumption1", tols.get("assumption1", 1e-9), positive=True)

    diag = Diagnostics()
    draw = raw.get("diagnostics") or {}
    if not isinstance(draw, dict):
        errors.append("diagnostics: must be a mapping")
        draw = {}
    for k in sorted(set(draw) - set(_DIAG_FLAGS) - {"stability"}):
        errors.append(f"diagnostics.{k}: unknown diagnostic")
    for flag in _DIAG_FLAGS:
        if flag in draw:
            if not isinstance(draw[flag], bool):
                errors.append(f"diagnostics.{flag}: must be true or false")
            else:
                setattr(diag, flag, draw[flag])
    stab = draw.get("stability", [])
    if isinstance(stab, dict):
        stab = stab.get("eps", [])
    if stab is False or stab is None:
        stab = []
    if not isinstance(stab, list):
        errors.append("diagnostics.stability: must be a list of eps values or {eps: [...]}")
        stab = []
    diag.stability_eps = [e for e in (_num(errors, f"diagnostics.stability.eps[{i}]", v, positive=True)
                                      for i, v in enumerate(stab)) if e is not None]

    sampler = raw.get("sampler") or {}
    if not isinstance(sampler, dict):
        errors.append("sampler: must be a mapping")
        sampler = {}
    for k in sorted(set(sampler) - _SAMPLER_KEYS):
        errors.append(f"sampler.{k}: unknown field")

    output = raw.get("output") or os.environ.get(OUTPUT_ENV) or "results"

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        scenario=scenario, params=dict(params), modulus=modulus, horizon=horizon, steps=steps,
        paths=paths, seed=seed, max_iter=max_iter, min_iter=min_iter, solver_tol=solver_tol,
        quadrature_tol=quad_tol, assumption1_tol=a1_tol, diagnostics=diag,
        sampler={k: v for k, v in sampler.items() if k in _SAMPLER_KEYS}, output=str(output))


def load_raw(path) -> dict:
    """Read a config file into a mapping without validating its fields."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not well-formed YAML ({exc})"]) from None
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: config root must be a mapping"])
    return raw


def parse_config(path) -> ExperimentConfig:
    """Load and validate a config file."""
    return validate_config(load_raw(path))
