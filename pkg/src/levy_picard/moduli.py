"""Concave moduli of continuity (kappa) and the time weight lambda(t).

A :class:`ConcaveModulus` bundles ``kappa``, the integrable weight
``lambda``, the affine domination ``kappa(q) <= a + b q`` and declared
metadata (Osgood divergence, which concavity branch applies).  Properties are
checked on finite grids because moduli are black-box evaluators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import InputDomainError, ModulusError

__all__ = [
    "QFLOOR",
    "StepFunction",
    "ConcaveModulus",
    "ModulusCheck",
    "linear_modulus",
    "log_modulus",
    "loglog_modulus",
    "power_modulus",
    "MODULI",
    "make_modulus",
    "inverse_integral",
]

# Below this argument moduli are evaluated on the linear chord through 0.
QFLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function: ``values[i]`` on ``[times[i], times[i+1])``.

    The last value extends to +inf.  A constant is ``StepFunction.constant(c)``.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(times) != len(values) or len(times) == 0:
            raise InputDomainError("step function needs equally many (>= 1) times and values")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise InputDomainError("step function times must start at 0 and increase strictly")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InputDomainError("lambda(t) must be finite and nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float) -> "StepFunction":
        return cls(np.array([0.0]), np.array([float(value)]))

    @classmethod
    def coerce(cls, obj) -> "StepFunction":
        if isinstance(obj, StepFunction):
            return obj
        if isinstance(obj, dict):
            return cls(obj["times"], obj["values"])
        return cls.constant(float(obj))

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    def sup(self, horizon: float | None = None) -> float:
        if horizon is None:
            return float(self.values.max())
        return float(self.values[self.times <= horizon].max())

    def integral(self, t: float) -> float:
        """``int_0^t`` of the step function."""
        if t <= 0:
            return 0.0
        edges = np.append(self.times, np.inf)
        lengths = np.clip(np.minimum(edges[1:], t) - edges[:-1], 0.0, None)
        return float(np.dot(lengths, self.values))

    def to_dict(self):
        if len(self.values) == 1:
            return float(self.values[0])
        return {"times": self.times.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True)
class ModulusCheck:
    kappa_zero: bool
    monotone: bool
    concave: bool
    dominated: bool
    worst_concavity_gap: float
    worst_domination_gap: float

    @property
    def ok(self) -> bool:
        return self.kappa_zero and self.monotone and self.concave and self.dominated


@dataclass(frozen=True, eq=False)
class ConcaveModulus:
    """Non-Lipschitz modulus ``kappa`` together with ``lambda(t)``.

    Parameters
    ----------
    name : str
    kappa : callable
        Vectorized map ``q >= 0 -> kappa(q) >= 0``.
    lam : StepFunction
        Integrable time weight; constant or tabulated.
    a, b : float or None
        Domination constants with ``kappa(q) <= a + b q``.  ``None`` marks the
        modulus incomplete for growth-constant purposes.
    osgood : bool
        Declared divergence of ``int_0+ dq / kappa(q)``.
    concavity_mode : {"kappa", "kappa2_over_q"}
        Which function is required to be concave.
    breakpoints : tuple of float
        Arguments where ``kappa`` is not smooth; quadrature splits there.
    """

    name: str
    kappa: Callable[[np.ndarray], np.ndarray]
    lam: StepFunction = field(default_factory=lambda: StepFunction.constant(1.0))
    a: float | None = None
    b: float | None = None
    osgood: bool = True
    concavity_mode: str = "kappa"
    breakpoints: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.concavity_mode not in ("kappa", "kappa2_over_q"):
            raise ModulusError(f"unknown concavity_mode {self.concavity_mode!r}")
        object.__setattr__(self, "lam", StepFunction.coerce(self.lam))

    def __call__(self, q):
        return self.kappa(q)

    def sup_lambda(self, horizon: float | None = None) -> float:
        return self.lam.sup(horizon)

    def with_lambda(self, lam) -> "ConcaveModulus":
        return ConcaveModulus(self.name, self.kappa, StepFunction.coerce(lam), self.a, self.b,
                              self.osgood, self.concavity_mode, self.breakpoints, dict(self.params))

    def describe(self) -> str:
        extra = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.name}({extra})" if extra else self.name

    def check(self, tol: float = 1e-12, points: int = 64, lo: float = 1e-12, hi: float = 1.0,
              domination_hi: float = 1e6) -> ModulusCheck:
        """Grid checks of kappa(0)=0, monotonicity, midpoint concavity and domination."""
        q = np.logspace(math.log10(lo), math.log10(hi), points)
        k = np.asarray(self.kappa(q), dtype=float)
        zero = float(np.asarray(self.kappa(np.array([0.0])))[0]) == 0.0
        monotone = bool(np.all(np.diff(k) >= -tol))
        f = k if self.concavity_mode == "kappa" else k * k / q
        p1, p2 = np.meshgrid(q, q, indexing="ij")
        f1, f2 = np.meshgrid(f, f, indexing="ij")
        mid = (p1 + p2) / 2
        kmid = np.asarray(self.kappa(mid.ravel()), dtype=float).reshape(mid.shape)
        fmid = kmid if self.concavity_mode == "kappa" else kmid * kmid / mid
        gap = (f1 + f2) / 2 - fmid
        worst_c = float(gap.max())
        if self.a is None or self.b is None:
            dominated, worst_d = False, math.inf
        else:
            qd = np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(domination_hi), 4 * points)])
            dgap = np.asarray(self.kappa(qd), dtype=float) - (self.a + self.b * qd)
            worst_d = float(dgap.max())
            dominated = worst_d <= tol * max(1.0, float(np.max(np.abs(self.a + self.b * qd))))
        return ModulusCheck(zero, monotone, worst_c <= tol, dominated, worst_c, worst_d)


def _guarded(core: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a formula: kappa(0) = 0 exactly, linear chord below QFLOOR."""
    k_floor = float(core(np.array([QFLOOR]))[0])

    def kappa(q):
        q = np.asarray(q, dtype=float)
        if np.any(q < 0):
            raise InputDomainError("kappa is defined for q >= 0 only")
        flat = np.atleast_1d(q).ravel()
        out = np.zeros_like(flat)
        big = flat >= QFLOOR
        tiny = (flat > 0) & ~big
        out[big] = core(flat[big])
        out[tiny] = flat[tiny] * (k_floor / QFLOOR)
        return out.reshape(q.shape) if q.ndim else out[0]

    return kappa


def _tangent_continued(core, dcore, knee: float):
    """``core`` on ``(0, knee]``; its tangent line at ``knee`` beyond.  Returns (kappa, a, b)."""
    fk = float(core(np.array([knee]))[0])
    sk = float(dcore(knee))

    def continued(q):
        out = np.empty_like(q)
        low = q <= knee
        out[low] = core(q[low])
        out[~low] = fk + sk * (q[~low] - knee)
        return out

    return _guarded(continued), fk - sk * knee, sk


def linear_modulus(lam=1.0) -> ConcaveModulus:
    """``kappa(q) = q``: the Lipschitz case."""
    return ConcaveModulus("linear", _guarded(lambda q: q), lam, a=0.0, b=1.0, osgood=True)


def log_modulus(lam=1.0, knee: float = math.exp(-1.0)) -> ConcaveModulus:
    """``kappa(q) = q ln(1/q)`` on ``(0, knee]``, tangent continuation beyond.

    With the default ``knee = 1/e`` the tangent is flat at height ``1/e``.
    """
    if not 0 < knee <= math.exp(-1.0):
        raise ModulusError("log modulus knee must lie in (0, 1/e]")
    kappa, a, b = _tangent_continued(lambda q: -q * np.log(q), lambda q: -math.log(q) - 1.0, knee)
    return ConcaveModulus("log", kappa, lam, a=a, b=b, osgood=True, breakpoints=(knee,),
                          params={"knee": knee})


def loglog_modulus(lam=1.0, knee: float = math.exp(-math.e)) -> ConcaveModulus:
    """``kappa(q) = q ln(1/q) ln ln(1/q)`` on ``(0, knee]``, tangent beyond."""
    if not 0 < knee <= math.exp(-math.e):
        raise ModulusError("loglog modulus knee must lie in (0, exp(-e)]")

    def core(q):
        ell = -np.log(q)
        return q * ell * np.log(ell)

    def dcore(q):
        ell = -math.log(q)
        return ell * math.log(ell) - math.log(ell) - 1.0

    kappa, a, b = _tangent_continued(core, dcore, knee)
    return ConcaveModulus("loglog", kappa, lam, a=a, b=b, osgood=True, breakpoints=(knee,),
                          params={"knee": knee})


def power_modulus(lam=1.0, p: float = 0.75, knee: float | None = None) -> ConcaveModulus:
    """``kappa(q) = q**p`` (``0 < p <= 1``), optionally tangent-continued beyond ``knee``.

    For ``p < 1`` the Osgood integral converges: a negative control.
    """
    if not 0 < p <= 1:
        raise ModulusError("power modulus exponent must lie in (0, 1]")
    params = {"p": p}
    if knee is None:
        kappa = _guarded(lambda q: q**p)
        # q**p <= 1 + q for every q >= 0 when p <= 1.
        a, b, bps = (0.0, 1.0, ()) if p == 1 else (1.0, 1.0, ())
    else:
        kappa, a, b = _tangent_continued(lambda q: q**p, lambda q: p * q ** (p - 1), knee)
        bps = (knee,)
        params["knee"] = knee
    return ConcaveModulus("power", kappa, lam, a=a, b=b, osgood=(p == 1), breakpoints=bps,
                          params=params)


MODULI: dict[str, Callable[..., ConcaveModulus]] = {
    "linear": linear_modulus,
    "log": log_modulus,
    "loglog": loglog_modulus,
    "power": power_modulus,
}


def make_modulus(name: str, lam=1.0, **params) -> ConcaveModulus:
    try:
        factory = MODULI[name]
    except KeyError:
        raise ModulusError(f"unknown modulus {name!r}; known: {sorted(MODULI)}") from None
    return factory(lam=lam, **params)


def inverse_integral(modulus: ConcaveModulus, lo: float, hi: float, tol: float = 1e-12) -> float:
    """``int_lo^hi dq / kappa(q)`` for ``0 < lo, hi`` by quadrature in ``s = ln q``.

    The substitution turns the logarithmic-family endpoint singularity of
    Osgood moduli into a smooth, slowly varying integrand.
    """
    if lo <= 0 or hi <= 0:
        raise InputDomainError("inverse_integral needs positive limits")
    if lo == hi:
        return 0.0
    sign = 1.0
    if lo > hi:
        lo, hi, sign = hi, lo, -1.0
    slo, shi = math.log(lo), math.log(hi)

    def integrand(s):
        q = math.exp(s)
        k = float(modulus.kappa(np.array([q]))[0])
        if k <= 0:
            raise ModulusError(f"kappa vanishes at q={q:.6g} > 0")
        return q / k

    pts = [math.log(b) for b in modulus.breakpoints if slo < math.log(b) < shi]
    val, _ = integrate.quad(integrand, slo, shi, points=pts or None,
                            epsabs=tol, epsrel=tol, limit=500)
    return sign * val
