"""SDE coefficients and empirical checks of the non-Lipschitz condition.

Norm conventions: ``|v|^2`` is the component sum of squares of a vector and
``||sigma||^2`` is the squared Frobenius norm of a ``d x r`` matrix.

Evaluator conventions (all vectorized, all pure):

* ``drift(t, y)``      -> array shaped like ``y`` (``(..., d)``)
* ``diffusion(t, y)``  -> ``(..., d, r)``; with ``r = 1`` also ``(..., d)``
* ``jump(t, y, x)``    -> ``(..., d)`` with marks ``x`` of shape ``(..., m)``

``t`` arrives as a float or as an array of shape ``y.shape[:-1] + (1,)`` (or
broadcastable to it), so expressions such as ``t * y`` or ``np.cos(t)`` work
as written.  Results are broadcast to the full shape, so constant
coefficients may return a bare constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CoefficientEvaluationError, InputDomainError, ModulusError
from .moduli import ConcaveModulus, inverse_integral
from .noise import JumpMeasure, TimeGrid

__all__ = [
    "LevyModel",
    "InitialLaw",
    "CoefficientSet",
    "SamplerConfig",
    "Assumption1Report",
    "OsgoodEvidence",
    "assumption1_discrepancy",
    "verify_assumption1",
    "check_osgood",
    "growth_constant",
]


@dataclass(frozen=True, eq=False)
class LevyModel:
    """Small-jump Levy noise: jump measure on ``{|x| < c}`` and Brownian dimension ``r``."""

    measure: JumpMeasure
    r: int

    @property
    def cutoff(self) -> float:
        return self.measure.cutoff


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Law of ``xi``: a point mass ``value`` or ``sampler(rng, d) -> d-vector``."""

    value: np.ndarray | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None

    @classmethod
    def point(cls, value) -> "InitialLaw":
        return cls(value=np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def coerce(cls, obj) -> "InitialLaw":
        if isinstance(obj, InitialLaw):
            return obj
        if callable(obj):
            return cls(sampler=obj)
        return cls.point(obj)

    def draw(self, bundle, d: int) -> np.ndarray:
        """Initial states for every ensemble row, shape ``(P, d)``."""
        p = bundle.path_count
        if self.sampler is None:
            if self.value.shape != (d,):
                raise InputDomainError(f"initial value has shape {self.value.shape}, expected ({d},)")
            return np.broadcast_to(self.value, (p, d)).copy()
        out = np.empty((p, d))
        for row in range(p):
            out[row] = self.sampler(bundle.stream("xi", row), d)
        return out


def _zero_drift(t, y):
    return 0.0


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficients ``b, sigma, F``, initial law, noise model and modulus.

    ``drift``, ``diffusion`` or ``jump`` may be ``None`` for identically zero.
    """

    d: int
    r: int
    horizon: float
    drift: Callable | None
    diffusion: Callable | None
    jump: Callable | None
    xi: InitialLaw
    levy: LevyModel
    modulus: ConcaveModulus
    name: str = "custom"
    params: dict = field(default_factory=dict)
    analytic_mean: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "xi", InitialLaw.coerce(self.xi))
        if self.levy.r != self.r:
            raise InputDomainError(f"Levy model has r={self.levy.r}, coefficients r={self.r}")
        if not self.horizon > 0:
            raise InputDomainError("horizon must be positive")

    @property
    def measure(self) -> JumpMeasure:
        return self.levy.measure

    def with_modulus(self, modulus: ConcaveModulus) -> "CoefficientSet":
        return _replace(self, modulus=modulus)

    def with_xi(self, xi) -> "CoefficientSet":
        return _replace(self, xi=InitialLaw.coerce(xi))

    # evaluators ---------------------------------------------------------

    def b(self, t, y):
        y = np.asarray(y, dtype=float)
        if self.drift is None:
            return np.zeros_like(y)
        return np.broadcast_to(_call(self.drift, _time_axis(t), y), y.shape)

    def sigma(self, t, y):
        y = np.asarray(y, dtype=float)
        shape = y.shape + (self.r,)
        if self.diffusion is None or self.r == 0:
            return np.zeros(shape)
        out = _call(self.diffusion, _time_axis(t), y)
        if self.r == 1 and 0 < out.ndim <= y.ndim:
            out = out[..., None]  # (..., d) means a single Brownian column
        return np.broadcast_to(out, shape)

    def F(self, t, y, x):
        y = np.asarray(y, dtype=float)
        if self.jump is None:
            return np.zeros_like(y)
        return np.broadcast_to(_call(self.jump, _time_axis(t), y, x), y.shape)

    def _over_atoms(self, t, ys, fn):
        nodes, weights = self.measure.quadrature_rule()
        lead = ys[0].shape[:-1]
        acc = None
        for x, w in zip(nodes, weights):
            xb = np.broadcast_to(x, lead + x.shape)
            term = w * fn(*(self.F(t, y, xb) for y in ys))
            acc = term if acc is None else acc + term
        return acc

    def jump_compensator(self, t, y):
        """``int F(t, y, x) nu(dx)``, shape like ``y``."""
        y = np.asarray(y, dtype=float)
        if self.jump is None or self.measure.is_empty:
            return np.zeros_like(y)
        return self._over_atoms(t, (y,), lambda f: f)

    def jump_l2(self, t, y1, y2=None):
        """``int |F(t, y1, x) - F(t, y2, x)|^2 nu(dx)``; ``y2=None`` means no subtraction."""
        y1 = np.asarray(y1, dtype=float)
        if self.jump is None or self.measure.is_empty:
            return np.zeros(y1.shape[:-1])
        if y2 is None:
            return self._over_atoms(t, (y1,), lambda f: np.sum(f * f, axis=-1))
        y2 = np.asarray(y2, dtype=float)
        return self._over_atoms(t, (y1, y2), lambda f1, f2: np.sum((f1 - f2) ** 2, axis=-1))


def _replace(cs: CoefficientSet, **changes) -> CoefficientSet:
    kw = {f: getattr(cs, f) for f in cs.__dataclass_fields__}
    kw.update(changes)
    return CoefficientSet(**kw)


def _time_axis(t):
    """Give ``t`` a trailing unit axis so it broadcasts against states ``(..., d)``."""
    t = np.asarray(t, dtype=float)
    return t[..., None] if t.ndim else t


def _call(fn, t, *args):
    try:
        return np.asarray(fn(t, *args), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with the offending input
        y = args[0]
        raise CoefficientEvaluationError(
            f"coefficient {getattr(fn, '__name__', fn)!r} failed: {exc}", t=t, y=y) from exc


# modulus bound check ----------------------------------------------------

def _lhs(coeffs: CoefficientSet, t, y1, y2):
    db = coeffs.b(t, y1) - coeffs.b(t, y2)
    ds = coeffs.sigma(t, y1) - coeffs.sigma(t, y2)
    return (np.sum(db * db, axis=-1) + np.sum(ds * ds, axis=(-2, -1))
            + coeffs.jump_l2(t, y1, y2))


def _rhs(coeffs: CoefficientSet, t, y1, y2):
    dy = np.asarray(y1, dtype=float) - np.asarray(y2, dtype=float)
    return coeffs.modulus.lam(t) * coeffs.modulus.kappa(np.sum(dy * dy, axis=-1))


def assumption1_discrepancy(coeffs: CoefficientSet, t, y1, y2):
    """LHS minus RHS of the non-Lipschitz inequality at ``(t, y1, y2)``.

    A value ``<= 0`` means the pair satisfies the condition.  Accepts single
    ``d``-vectors or batches ``(n, d)``.
    """
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > coeffs.horizon):
        raise InputDomainError(f"t must lie in [0, {coeffs.horizon}]")
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    return _lhs(coeffs, t, y1, y2) - _rhs(coeffs, t, y1, y2)


@dataclass(frozen=True)
class SamplerConfig:
    """Pair sampler for :func:`verify_assumption1`.

    ``near_origin_fraction`` of the pairs have log-uniform magnitudes in
    ``[min_scale, 0.1]``; ``near_diagonal_fraction`` are box points paired with
    a log-uniform perturbation; the rest are uniform in the box.
    """

    pairs: int = 4096
    box_radius: float = 10.0
    near_origin_fraction: float = 0.5
    near_diagonal_fraction: float = 0.25
    min_scale: float = 1e-8
    seed: int = 0


@dataclass
class Assumption1Report:
    passed: bool
    max_discrepancy: float
    worst_t: float
    worst_y1: list
    worst_y2: list
    worst_ratio: float
    violations: int
    pairs: int
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _directions(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _log_uniform(rng, n, lo, hi):
    return 10.0 ** rng.uniform(math.log10(lo), math.log10(hi), n)


def sample_pairs(coeffs: CoefficientSet, cfg: SamplerConfig):
    """Draw ``(t, y1, y2)`` test triples concentrated where non-Lipschitz behaviour lives."""
    rng = np.random.default_rng(cfg.seed)
    d, n = coeffs.d, cfg.pairs
    n_orig = int(round(n * cfg.near_origin_fraction))
    n_diag = int(round(n * cfg.near_diagonal_fraction))
    n_box = max(n - n_orig - n_diag, 0)

    y1o = _directions(rng, n_orig, d) * _log_uniform(rng, n_orig, cfg.min_scale, 0.1)[:, None]
    kind = rng.integers(0, 3, n_orig)
    partner = _directions(rng, n_orig, d) * _log_uniform(rng, n_orig, cfg.min_scale, 0.1)[:, None]
    nudge = _directions(rng, n_orig, d) * (np.linalg.norm(y1o, axis=1)
                                           * _log_uniform(rng, n_orig, 1e-6, 1.0))[:, None]
    y2o = np.where(kind[:, None] == 0, 0.0, np.where(kind[:, None] == 1, y1o + nudge, partner))

    y1d = rng.uniform(-cfg.box_radius, cfg.box_radius, (n_diag, d))
    y2d = y1d + _directions(rng, n_diag, d) * _log_uniform(rng, n_diag, cfg.min_scale, 1.0)[:, None]

    y1b = rng.uniform(-cfg.box_radius, cfg.box_radius, (n_box, d))
    y2b = rng.uniform(-cfg.box_radius, cfg.box_radius, (n_box, d))

    y1 = np.vstack([y1o, y1d, y1b])
    y2 = np.vstack([y2o, y2d, y2b])
    t = rng.uniform(0.0, coeffs.horizon, len(y1))
    return t, y1, y2


_ROUNDOFF = 64 * np.finfo(float).eps


def verify_assumption1(coeffs: CoefficientSet, sampler_config: SamplerConfig | None = None,
                       tol: float = 1e-9) -> Assumption1Report:
    """Sample test triples and report the largest violation of the inequality.

    Passes iff no discrepancy exceeds ``tol`` plus a relative roundoff
    allowance of ``64 eps`` times the larger side.  The recorded worst pair
    is the violating pair with the largest ratio LHS/RHS, which locates the
    failure mode independently of scale; without violations it is the pair of
    largest discrepancy.
    """
    cfg = sampler_config or SamplerConfig()
    t, y1, y2 = sample_pairs(coeffs, cfg)
    lhs = _lhs(coeffs, t, y1, y2)
    rhs = _rhs(coeffs, t, y1, y2)
    disc = lhs - rhs
    # Roundoff in evaluating both sides scales with their magnitude.
    viol = disc > tol + _ROUNDOFF * np.maximum(np.abs(lhs), np.abs(rhs))
    if np.any(viol):
        with np.errstate(divide="ignore"):
            ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.inf)
        ratio = np.where(viol, ratio, -np.inf)
        i = int(np.argmax(ratio))
        worst_ratio = float(ratio[i])
    else:
        i = int(np.argmax(disc))
        worst_ratio = float(lhs[i] / rhs[i]) if rhs[i] > 0 else 0.0
    return Assumption1Report(
        passed=not bool(np.any(viol)), max_discrepancy=float(disc.max()),
        worst_t=float(t[i]), worst_y1=y1[i].tolist(), worst_y2=y2[i].tolist(),
        worst_ratio=worst_ratio, violations=int(viol.sum()), pairs=len(disc), tol=tol)


# Osgood divergence ------------------------------------------------------

@dataclass
class OsgoodEvidence:
    """Numerical evidence (not a proof) about ``int_0+ dq / kappa(q)``."""

    eps: list
    integrals: list
    growth_per_decade: list
    decay_ratio_per_decade: float
    verdict: str
    note: str = "numerical evidence, not a proof"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_osgood(modulus: ConcaveModulus, eps_sequence=None, tol: float = 1e-12,
                 growth_floor: float = 0.01, ratio_floor: float = 0.85) -> OsgoodEvidence:
    """Tabulate ``I(eps) = int_eps^1 dq / kappa(q)`` along a decreasing sequence.

    The verdict is "divergent" when the growth of ``I`` per decade of ``eps``
    over the last interval stays above ``growth_floor`` and is not decaying
    geometrically (per-decade ratio of successive growth rates at least
    ``ratio_floor``); otherwise "convergent".
    """
    eps = np.asarray(eps_sequence if eps_sequence is not None
                     else [10.0 ** -k for k in range(2, 13, 2)], dtype=float)
    if len(eps) < 3 or np.any(np.diff(eps) >= 0) or eps[-1] <= 0 or eps[0] > 1:
        raise InputDomainError("eps_sequence needs >= 3 strictly decreasing values in (0, 1]")
    probe = np.logspace(math.log10(eps[-1]), 0.0, 400)
    kp = np.asarray(modulus.kappa(probe), dtype=float)
    if np.any(kp <= 0):
        raise ModulusError(f"kappa vanishes at q={probe[np.argmax(kp <= 0)]:.6g} > 0")
    integrals = np.array([inverse_integral(modulus, e, 1.0, tol) for e in eps])
    decades = np.log10(eps[:-1] / eps[1:])
    growth = np.diff(integrals) / decades
    centers = np.log10(eps[:-1]) - decades / 2
    span = centers[-2] - centers[-1]
    if growth[-2] > 0 and growth[-1] > 0:
        ratio = float((growth[-1] / growth[-2]) ** (1.0 / span))
    else:
        ratio = 0.0
    divergent = growth[-1] >= growth_floor and ratio >= ratio_floor
    return OsgoodEvidence(eps.tolist(), integrals.tolist(), growth.tolist(), ratio,
                          "divergent" if divergent else "convergent")


# Growth constant --------------------------------------------------------

def growth_constant(coeffs: CoefficientSet, grid: TimeGrid | None = None) -> float:
    """Linear-growth constant ``K1`` with ``|b|^2 + ||sigma||^2 + int |F|^2 dnu <= K1 (1 + |y|^2)``.

    ``K1 = max(2 sup_t(|b(t,0)|^2 + ||sigma(t,0)||^2 + int |F(t,0,x)|^2 nu(dx) + lambda(t) a),
    2 b sup_t lambda(t))`` with the suprema taken over the grid nodes.
    """
    mod = coeffs.modulus
    if mod.a is None or mod.b is None:
        raise ModulusError(f"modulus {mod.name!r} lacks domination constants (a, b)")
    grid = grid or TimeGrid(coeffs.horizon, 256)
    t = np.union1d(grid.times, mod.lam.times[mod.lam.times <= grid.horizon])
    zero = np.zeros((len(t), coeffs.d))
    b0 = coeffs.b(t, zero)
    s0 = coeffs.sigma(t, zero)
    at_origin = (np.sum(b0 * b0, axis=-1) + np.sum(s0 * s0, axis=(-2, -1))
                 + coeffs.jump_l2(t, zero) + mod.lam(t) * mod.a)
    lam_sup = float(np.max(mod.lam(t)))
    return float(max(2.0 * np.max(at_origin), 2.0 * mod.b * lam_sup))


def growth_lhs(coeffs: CoefficientSet, t, y):
    """``|b(t,y)|^2 + ||sigma(t,y)||^2 + int |F(t,y,x)|^2 nu(dx)``."""
    y = np.asarray(y, dtype=float)
    b = coeffs.b(t, y)
    s = coeffs.sigma(t, y)
    return np.sum(b * b, axis=-1) + np.sum(s * s, axis=(-2, -1)) + coeffs.jump_l2(t, y)
