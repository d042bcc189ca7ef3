"""Bihari inequality, stability certificates and the empirical mean-square test.

``G(q) = int_1^q ds / kappa(s)`` is tabulated once per modulus on a grid in
``s = ln q`` from ``ln QFLOOR`` upward.  Each panel is integrated adaptively,
so ``G`` at any point is a cumulative table value plus one short quadrature,
and ``G^{-1}`` reduces to a table lookup followed by a bracketed root search
inside a single panel.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .coefficients import CoefficientSet, InitialLaw, SamplerConfig, verify_assumption1
from .errors import DomainError, InputDomainError, ModulusError, NoCertificateError
from .moduli import QFLOOR, ConcaveModulus, StepFunction
from .noise import TimeGrid
from .picard import make_bundle, solve, sup_distance

__all__ = [
    "GTable",
    "g_table",
    "bihari_G",
    "bihari_G_inv",
    "bihari_bound",
    "BihariBound",
    "delta_for_epsilon",
    "kappa3_scale",
    "StabilityReport",
    "mean_square_stability_test",
]

_S_MIN = math.log(QFLOOR)
_S_MAX = 60.0


class GTable:
    """Tabulated ``G`` for one modulus.  Immutable after construction."""

    def __init__(self, modulus: ConcaveModulus, tol: float = 1e-12, panel: float = 1.0):
        self.modulus = modulus
        self.tol = tol
        nodes = set(np.arange(0.0, _S_MIN, -panel)) | set(np.arange(0.0, _S_MAX, panel))
        nodes |= {_S_MIN, _S_MAX}
        nodes |= {math.log(b) for b in modulus.breakpoints if QFLOOR < b < math.exp(_S_MAX)}
        s = np.array(sorted(nodes))
        self._bps = sorted(math.log(b) for b in modulus.breakpoints if b > 0)
        pieces = np.array([self._panel(s[i], s[i + 1]) for i in range(len(s) - 1)])
        if np.any(pieces <= 0):
            raise ModulusError(f"1/kappa is not positive on panel near q={math.exp(s[np.argmax(pieces <= 0)]):.3g}")
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        i0 = int(np.searchsorted(s, 0.0))
        self.s = s
        self.cum = cum - cum[i0]  # G(1) = 0
        self.s.setflags(write=False)
        self.cum.setflags(write=False)

    def _integrand(self, s: float) -> float:
        q = math.exp(s)
        k = float(self.modulus.kappa(np.array([q]))[0])
        if not k > 0:
            raise ModulusError(f"kappa vanishes at q={q:.6g} > 0")
        return q / k

    def _panel(self, s0: float, s1: float) -> float:
        if s0 == s1:
            return 0.0
        lo, hi, sign = (s0, s1, 1.0) if s0 < s1 else (s1, s0, -1.0)
        pts = [b for b in self._bps if lo < b < hi]
        val, _ = integrate.quad(self._integrand, lo, hi, points=pts or None,
                                epsabs=self.tol, epsrel=self.tol, limit=200)
        return sign * val

    @property
    def g_min(self) -> float:
        """``G(QFLOOR)``: the lowest representable value of ``G``."""
        return float(self.cum[0])

    def G_log(self, s: float) -> float:
        """``G(e^s)``."""
        if s < _S_MIN:
            raise DomainError(f"q = exp({s:.4g}) is below the representable floor {QFLOOR}")
        j = min(int(np.searchsorted(self.s, s, side="right")) - 1, len(self.s) - 1)
        return float(self.cum[j]) + self._panel(float(self.s[j]), s)

    def G(self, q: float) -> float:
        if not q > 0:
            raise InputDomainError(f"G needs q > 0, got {q}")
        if q < QFLOOR:
            q = QFLOOR
        return self.G_log(math.log(q))

    def G_inv(self, x: float, rtol: float = 1e-12) -> float:
        if not math.isfinite(x):
            raise DomainError(f"{x} is not in Dom(G^-1)")
        if x < self.g_min:
            detail = ("below the representable floor; G^-1(x) < 1e-300" if self.modulus.osgood
                      else f"G is bounded below by about {self.g_min:.12g}")
            raise DomainError(f"x={x:.12g} is outside Dom(G^-1): {detail}")
        j = int(np.searchsorted(self.cum, x, side="right")) - 1
        if j >= len(self.s) - 1:
            lo, step = float(self.s[-1]), 1.0
            hi = lo + step
            while self.G_log(hi) < x:
                lo, step = hi, 2 * step
                hi = lo + step
                if hi > 700:
                    raise DomainError(f"G^-1({x:.6g}) overflows")
        else:
            lo, hi = float(self.s[j]), float(self.s[j + 1])
        if self.G_log(lo) == x:
            return math.exp(lo)
        s = optimize.brentq(lambda u: self.G_log(u) - x, lo, hi, xtol=rtol, rtol=4 * np.finfo(float).eps)
        return math.exp(s)


_TABLES: "weakref.WeakKeyDictionary[ConcaveModulus, GTable]" = weakref.WeakKeyDictionary()


def g_table(modulus: ConcaveModulus) -> GTable:
    """Cached :class:`GTable` for ``modulus`` (built on first use)."""
    table = _TABLES.get(modulus)
    if table is None:
        table = _TABLES[modulus] = GTable(modulus)
    return table


def bihari_G(modulus: ConcaveModulus, q: float) -> float:
    """``G(q) = int_1^q ds / kappa(s)``; negative for ``q < 1``."""
    return g_table(modulus).G(q)


def bihari_G_inv(modulus: ConcaveModulus, x: float) -> float:
    """Inverse of :func:`bihari_G`; raises :class:`DomainError` outside ``Dom(G^-1)``."""
    return g_table(modulus).G_inv(x)


def _v_integral(v, t: float) -> float:
    if isinstance(v, (int, float)):
        if v < 0:
            raise InputDomainError("v must be nonnegative")
        return float(v) * t
    return StepFunction.coerce(v).integral(t)


def bihari_bound(u0: float, v, modulus: ConcaveModulus, t: float) -> float:
    """``G^{-1}(G(u0) + int_0^t v(s) ds)``, the Bihari bound on ``u(t)``.

    ``v`` is a nonnegative constant or a :class:`StepFunction`.  For ``u0 = 0``
    and an Osgood modulus the bound is 0.
    """
    if u0 < 0 or t < 0:
        raise InputDomainError("u0 and t must be nonnegative")
    table = g_table(modulus)
    vint = _v_integral(v, t)
    if u0 == 0:
        if modulus.osgood:
            return 0.0
        g0 = table.g_min
    else:
        g0 = table.G(max(u0, QFLOOR))
    if vint == 0:
        return float(u0)
    return table.G_inv(g0 + vint)


@dataclass(frozen=True, eq=False)
class BihariBound:
    """Bihari bound for fixed ``(modulus, u0, v)`` as a function of ``t``."""

    modulus: ConcaveModulus
    u0: float
    v: object = 1.0

    @property
    def table(self) -> GTable:
        return g_table(self.modulus)

    def __call__(self, t: float) -> float:
        return bihari_bound(self.u0, self.v, self.modulus, t)

    def valid_until(self, horizon: float) -> bool:
        """Whether ``G(u0) + int_0^horizon v`` stays inside ``Dom(G^-1)``."""
        try:
            self(horizon)
        except DomainError:
            return False
        return True


def kappa3_scale(modulus: ConcaveModulus, horizon: float) -> float:
    """Factor ``16 T sup lambda`` with ``kappa_3 = factor * kappa``."""
    return 16.0 * horizon * modulus.sup_lambda(horizon)


def delta_for_epsilon(modulus: ConcaveModulus, T: float, eps: float) -> float:
    """Largest ``delta`` with ``int_delta^{eps/2} dq / kappa_3(q) >= T``.

    ``kappa_3 = 16 T sup(lambda) kappa``.  Solved as ``G(delta) = G(eps/2) - c T``
    through the bracketed inverse, then nudged down until the inequality holds
    with the tabulated ``G``.  Always ``delta < eps/2``.

    Raises
    ------
    NoCertificateError
        If the condition cannot be met above ``QFLOOR`` (non-Osgood modulus
        with too little integral mass, or a representable-range underflow).
    """
    if not eps > 0 or not T > 0:
        raise InputDomainError("eps and T must be positive")
    eps1 = eps / 2.0
    c = kappa3_scale(modulus, T)
    if c == 0:
        return float(np.nextafter(eps1, 0.0))
    table = g_table(modulus)
    need = c * T
    target = table.G(eps1) - need
    try:
        delta = table.G_inv(target)
    except DomainError as exc:
        kind = "non-Osgood modulus lacks integral mass" if not modulus.osgood else "delta underflows"
        raise NoCertificateError(f"no delta for eps={eps:g}: {kind} ({exc})") from None
    for _ in range(64):
        if table.G(eps1) - table.G(delta) >= need and delta < eps1:
            return delta
        delta *= 1.0 - 1e-9
    raise NoCertificateError(f"could not certify delta for eps={eps:g}")


@dataclass
class StabilityReport:
    eps: float
    delta: float | None
    certificate_modulus: str
    estimate: float
    se: float
    initial_gap: float
    initial_gap_x4: float
    precondition_held: bool | None
    certificate_applicable: bool
    passed: bool
    notes: list

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def mean_square_stability_test(coeffs: CoefficientSet, xi, eta, grid: TimeGrid, paths: int,
                               eps: float, seed: int = 0, tol: float = 1e-6,
                               max_iter: int = 50, check_assumption: bool = True,
                               sampler_config: SamplerConfig | None = None) -> StabilityReport:
    """Empirical mean-square stability on common noise.

    Solves from ``xi`` and from ``eta`` on the same bundle and estimates
    ``u(T) = E sup_{s<=T} |X^xi(s) - X^eta(s)|^2``.  Passes iff
    ``u(T) <= eps + 5 SE``.  Also reports whether the certificate
    precondition ``4 E|xi - eta|^2 <= delta(eps)`` held.  Initial laws given
    as samplers are coupled through the shared per-path stream.
    """
    notes = []
    bundle = make_bundle(coeffs, grid, paths, seed)
    xl, el = InitialLaw.coerce(xi), InitialLaw.coerce(eta)
    sol_x, _ = solve(coeffs, grid, paths, tol, max_iter, bundle=bundle, xi=xl)
    sol_e, _ = solve(coeffs, grid, paths, tol, max_iter, bundle=bundle, xi=el)
    est, se = sup_distance(sol_x, sol_e)
    gap = sol_x.xi - sol_e.xi
    g2 = float(np.mean(np.sum(gap * gap, axis=-1)))

    applicable = modulus_ok = coeffs.modulus.osgood
    if not modulus_ok:
        notes.append("modulus is not Osgood; certificate inapplicable")
    if check_assumption:
        a1 = verify_assumption1(coeffs, sampler_config)
        if not a1.passed:
            applicable = False
            notes.append(f"assumption check failed (max discrepancy {a1.max_discrepancy:.3g}); "
                         "certificate inapplicable")
    try:
        delta = delta_for_epsilon(coeffs.modulus, grid.horizon, eps)
        pre = 4.0 * g2 <= delta
    except NoCertificateError as exc:
        delta, pre = None, None
        applicable = False
        notes.append(str(exc))
    notes.append("definition uses E|xi-eta|^2 < delta; the certificate checks 4 E|xi-eta|^2 <= delta")
    scale = kappa3_scale(coeffs.modulus, grid.horizon)
    return StabilityReport(eps=eps, delta=delta, certificate_modulus=f"{scale:g} * {coeffs.modulus.describe()}",
                           estimate=est, se=se, initial_gap=g2, initial_gap_x4=4 * g2,
                           precondition_held=pre, certificate_applicable=applicable,
                           passed=est <= eps + 5 * se, notes=notes)
