"""Built-in scenarios: named constructors for coefficient sets.

Each builder takes a parameter mapping and the horizon and returns a
:class:`CoefficientSet` carrying its declared modulus.  All built-ins except
``hoelder-negative-control`` satisfy the non-Lipschitz condition with the
modulus they declare; the negative control exists so the verifier has a
guaranteed failure fixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, InitialLaw, LevyModel
from .errors import InputDomainError
from .moduli import ConcaveModulus, linear_modulus, log_modulus, make_modulus
from .noise import JumpMeasure

__all__ = ["Scenario", "SCENARIOS", "build_scenario", "ou_jump_second_moment"]


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    defaults: dict
    builder: Callable[[dict, float], CoefficientSet]


def _jumps(p):
    if p["mass"] == 0:
        return JumpMeasure.empty(p["cutoff"])
    return JumpMeasure.atomic([p["mark"]], [p["mass"]], p["cutoff"])


def _zero(p, horizon):
    d, r = int(p["d"]), int(p["r"])
    xi = np.broadcast_to(np.atleast_1d(np.asarray(p["xi"], dtype=float)), (d,)).copy()
    return CoefficientSet(d, r, horizon, None, None, None, InitialLaw.point(xi),
                          LevyModel(JumpMeasure.empty(1.0, d), r), linear_modulus(1.0),
                          name="zero", params=p, analytic_mean=lambda t: np.multiply.outer(np.ones_like(t), xi))


def _deterministic_exp(p, horizon):
    a, xi = float(p["a"]), float(p["xi"])
    return CoefficientSet(1, 0, horizon, lambda t, y: a * y, None, None, InitialLaw.point([xi]),
                          LevyModel(JumpMeasure.empty(1.0), 0), linear_modulus(a * a),
                          name="deterministic-exp", params=p,
                          analytic_mean=lambda t: (xi * np.exp(a * np.asarray(t)))[..., None])


def _ou_jump(p, horizon):
    a, s, xi = float(p["a"]), float(p["sigma"]), float(p["xi"])
    return CoefficientSet(
        1, 1, horizon,
        drift=lambda t, y: -a * y,
        diffusion=lambda t, y: s,
        jump=lambda t, y, x: x,
        xi=InitialLaw.point([xi]),
        levy=LevyModel(_jumps(p), 1),
        # Only the drift depends on the state: |a(y1 - y2)|^2 = a^2 |y1 - y2|^2.
        modulus=linear_modulus(a * a),
        name="ou-jump", params=p,
        analytic_mean=lambda t: (xi * np.exp(-a * np.asarray(t)))[..., None])


def ou_jump_second_moment(t, params: dict):
    """``E X(t)^2`` for the ``ou-jump`` scenario (continuous time)."""
    p = {**SCENARIOS["ou-jump"].defaults, **params}
    a, s, xi = p["a"], p["sigma"], p["xi"]
    q = s * s + p["mass"] * p["mark"] ** 2
    t = np.asarray(t, dtype=float)
    decay = np.exp(-2 * a * t)
    noise = q * t if a == 0 else q * (1 - decay) / (2 * a)
    return xi * xi * decay + noise


def _log_drift(p, horizon):
    mod = log_modulus(1.0)
    s = float(p["sigma"])
    kappa = mod.kappa

    def drift(t, y):
        # omega(|y|) = sqrt(kappa(|y|^2)) is concave, nondecreasing and
        # subadditive, so |omega(|y1|) - omega(|y2|)|^2 <= kappa(|y1 - y2|^2),
        # with equality for pairs (y, 0).
        return np.sqrt(kappa(np.sum(y * y, axis=-1)))[..., None]

    return CoefficientSet(1, 1, horizon, drift, lambda t, y: s, lambda t, y, x: x,
                          InitialLaw.point([float(p["xi"])]), LevyModel(_jumps(p), 1), mod,
                          name="log-modulus-drift", params=p)


def _hoelder(p, horizon):
    e, s = float(p["exponent"]), float(p["sigma"])
    return CoefficientSet(1, 1, horizon, lambda t, y: np.abs(y) ** e, lambda t, y: s, None,
                          InitialLaw.point([float(p["xi"])]),
                          LevyModel(JumpMeasure.empty(1.0), 1), linear_modulus(1.0),
                          name="hoelder-negative-control", params=p)


_JUMP_DEFAULTS = {"mark": 0.1, "mass": 1.0, "cutoff": 1.0}

SCENARIOS: dict[str, Scenario] = {s.name: s for s in [
    Scenario("zero", "all coefficients identically zero", {"d": 1, "r": 1, "xi": 1.0}, _zero),
    Scenario("deterministic-exp", "b(y) = a y, no noise", {"a": 1.0, "xi": 1.0}, _deterministic_exp),
    Scenario("ou-jump", "b(y) = -a y, constant sigma, F(t, y, x) = x with one jump atom",
             {"a": 1.0, "sigma": 0.3, "xi": 1.0, **_JUMP_DEFAULTS}, _ou_jump),
    Scenario("log-modulus-drift", "b(y) = sqrt(kappa(|y|^2)) for kappa(q) = q ln(1/q)",
             {"sigma": 0.3, "xi": 0.0, **_JUMP_DEFAULTS}, _log_drift),
    Scenario("hoelder-negative-control", "b(y) = |y|^(1/4) declared Lipschitz: must fail",
             {"exponent": 0.25, "sigma": 0.1, "xi": 0.0}, _hoelder),
]}


def build_scenario(name: str, params: dict | None = None, horizon: float = 1.0,
                   modulus: ConcaveModulus | dict | None = None) -> CoefficientSet:
    """Instantiate a registered scenario.

    ``modulus`` overrides the declared one; a mapping ``{"name", "lam",
    "params"}`` is resolved through the modulus registry.
    """
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise InputDomainError(f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}") from None
    params = dict(params or {})
    unknown = sorted(set(params) - set(sc.defaults))
    if unknown:
        raise InputDomainError(f"scenario {name!r} has no parameters {unknown}; "
                               f"accepted: {sorted(sc.defaults)}")
    coeffs = sc.builder({**sc.defaults, **params}, float(horizon))
    if modulus is not None:
        if isinstance(modulus, dict):
            modulus = make_modulus(modulus["name"], lam=modulus.get("lam", 1.0),
                                   **modulus.get("params", {}))
        coeffs = coeffs.with_modulus(modulus)
    return coeffs
