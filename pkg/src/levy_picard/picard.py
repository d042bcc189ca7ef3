"""Successive approximation (Picard iteration) on a frozen noise bundle.

Every iterate ``X_k`` is built from ``X_{k-1}`` with left-point (Ito)
evaluation of the drift, Brownian and compensated-jump integrals::

    X_k(t_m) = xi + sum_{i<m} b(t_i, X_{k-1}(t_i)) dt
                  + sum_{i<m} sigma(t_i, X_{k-1}(t_i)) dB_i
                  + sum_{tau <= t_m} F(t_j(tau), X_{k-1}(t_j(tau)), mark)
                  - sum_{i<m} [int F(t_i, X_{k-1}(t_i), x) nu(dx)] dt

where ``t_j(tau)`` is the last grid node strictly before the jump time (the
``X(s-)`` convention).  Because ``X_{k-1}`` is known on the whole grid, each
step is a single vectorized pass over paths and nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, InitialLaw, growth_constant
from .errors import BundleMismatchError, DivergenceError, InputDomainError, ReplayError
from .noise import NoiseBundle, TimeGrid

__all__ = [
    "IterateEnsemble",
    "IterateRecord",
    "ConvergenceReport",
    "MomentBoundReport",
    "UniquenessReport",
    "make_bundle",
    "initial_ensemble",
    "picard_step",
    "sup_distance",
    "second_moment_profile",
    "moment_bound",
    "solve",
    "iterate",
    "moment_bound_check",
    "pathwise_uniqueness_check",
]


@dataclass(frozen=True, eq=False)
class IterateEnsemble:
    """Iterate ``X_k`` for every path: ``states`` has shape ``(P, M + 1, d)``."""

    k: int
    states: np.ndarray
    bundle: NoiseBundle
    coeffs: CoefficientSet
    left_limit: bool = True

    @property
    def xi(self) -> np.ndarray:
        return self.states[:, 0, :]

    @property
    def grid(self) -> TimeGrid:
        return self.bundle.grid


def make_bundle(coeffs: CoefficientSet, grid: TimeGrid, paths: int, seed: int,
                path_ids=None) -> NoiseBundle:
    if grid.horizon != coeffs.horizon:
        raise InputDomainError(f"grid horizon {grid.horizon} differs from coefficient horizon {coeffs.horizon}")
    return NoiseBundle.generate(seed, grid, coeffs.measure, coeffs.r,
                                path_count=paths if path_ids is None else None, path_ids=path_ids)


def initial_ensemble(coeffs: CoefficientSet, bundle: NoiseBundle, xi=None) -> IterateEnsemble:
    """``X_0(t) = xi`` on every node."""
    law = coeffs.xi if xi is None else InitialLaw.coerce(xi)
    x0 = law.draw(bundle, coeffs.d)
    states = np.repeat(x0[:, None, :], bundle.grid.steps + 1, axis=1)
    states.setflags(write=False)
    return IterateEnsemble(0, states, bundle, coeffs)


def picard_step(prev: IterateEnsemble) -> IterateEnsemble:
    """One successive-approximation step ``X_{k-1} -> X_k``."""
    bundle, coeffs = prev.bundle, prev.coeffs
    grid = bundle.grid
    dt = grid.dt
    t = grid.times[:-1]
    x = prev.states[:, :-1, :]
    if not np.all(np.isfinite(prev.states)):
        raise _divergence(prev.states, prev.k)
    with np.errstate(over="ignore", invalid="ignore"):
        incr = coeffs.b(t, x) * dt
        if coeffs.r > 0 and coeffs.diffusion is not None:
            incr = incr + np.einsum("pmij,pmj->pmi", coeffs.sigma(t, x), bundle.brownian)
        if coeffs.jump is not None and not coeffs.measure.is_empty:
            incr = incr - coeffs.jump_compensator(t, x) * dt
            if len(bundle.jump_time):
                rows, steps = bundle.jump_path, bundle.jump_step
                vals = coeffs.F(t[steps], x[rows, steps], bundle.jump_mark)
                incr = np.array(incr, copy=True)
                np.add.at(incr, (rows, steps), vals)
        xi = prev.states[:, 0, :]
        states = np.empty_like(prev.states)
        states[:, 0, :] = xi
        states[:, 1:, :] = xi[:, None, :] + np.cumsum(incr, axis=1)
    if not np.all(np.isfinite(states)):
        raise _divergence(states, prev.k + 1)
    states.setflags(write=False)
    return IterateEnsemble(prev.k + 1, states, bundle, coeffs, prev.left_limit)


def _divergence(states, k):
    bad = ~np.all(np.isfinite(states), axis=-1)
    nodes = np.where(bad.any(axis=0))[0]
    node = int(nodes[0])
    path = int(np.where(bad[:, node])[0][0])
    return DivergenceError(f"non-finite state in iterate {k} at path {path}, node {node}",
                           path=path, node=node, k=k)


def _check_same_noise(a: IterateEnsemble, b: IterateEnsemble):
    if a.bundle is b.bundle:
        return
    if a.bundle.key() != b.bundle.key():
        raise BundleMismatchError("ensembles were built on different noise bundles")


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def sup_distance(a: IterateEnsemble, b: IterateEnsemble, method: str = "scan") -> tuple[float, float]:
    """Monte Carlo estimate of ``E sup_t |X_a(t) - X_b(t)|^2`` and its standard error.

    ``method="scan"`` reduces the full trajectory array; ``"streaming"`` keeps
    a running maximum node by node.  Both give identical results.
    """
    _check_same_noise(a, b)
    if method == "scan":
        diff = a.states - b.states
        per_path = np.max(np.sum(diff * diff, axis=-1), axis=1)
    elif method == "streaming":
        per_path = np.zeros(a.states.shape[0])
        for m in range(a.states.shape[1]):
            dm = a.states[:, m, :] - b.states[:, m, :]
            per_path = np.maximum(per_path, np.sum(dm * dm, axis=-1))
    else:
        raise InputDomainError(f"unknown method {method!r}")
    return _mean_se(per_path)


def second_moment_profile(ens: IterateEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """``E|X_k(t_i)|^2`` per node with its standard error."""
    with np.errstate(over="ignore", invalid="ignore"):
        sq = np.sum(ens.states * ens.states, axis=-1)
        n = sq.shape[0]
        se = np.std(sq, axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(sq.shape[1])
    return sq.mean(axis=0), se


def moment_bound(k1: float, xi_second_moment: float, horizon: float) -> float:
    """``4 (1 + E|xi|^2) exp(4 K1 T^2)``."""
    expo = 4.0 * k1 * horizon**2
    if expo > 700:
        return math.inf
    return 4.0 * (1.0 + xi_second_moment) * math.exp(expo)


@dataclass
class IterateRecord:
    """Successive distance ``D(k, k+1)``."""

    k: int
    distance: float
    se: float

    def to_dict(self):
        return {"k": self.k, "D": self.distance, "SE": self.se}


@dataclass
class ConvergenceReport:
    records: list = field(default_factory=list)
    verdict: str = "max-iterations"
    iterations: int = 0
    tol: float = 0.0
    k1: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    xi_second_moment: float = 0.0
    horizon: float = 1.0
    moments: list = field(default_factory=list, repr=False)
    moment_se: list = field(default_factory=list, repr=False)
    iterates: list | None = field(default=None, repr=False)

    @property
    def distances(self) -> list[float]:
        return [r.distance for r in self.records]

    def pair_distance(self, n: int, i: int) -> tuple[float, float]:
        """``D(n, i)``; requires ``solve(..., keep_history=True)``."""
        if self.iterates is None:
            raise InputDomainError("pairwise distances need keep_history=True")
        if n == i:
            return 0.0, 0.0
        return sup_distance(self.iterates[n], self.iterates[i])

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict, "iterations": self.iterations, "tol": self.tol,
            "constants": {"K1": self.k1, "C1": self.c1, "C2": self.c2, "C3": self.c3},
            "E_xi2": self.xi_second_moment,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _constants(report: ConvergenceReport, coeffs: CoefficientSet, grid: TimeGrid, x0: IterateEnsemble):
    mod = coeffs.modulus
    with np.errstate(over="ignore", invalid="ignore"):
        xi2 = float(np.mean(np.sum(x0.xi * x0.xi, axis=-1)))
    report.xi_second_moment = xi2
    report.horizon = grid.horizon
    report.c2 = 12.0 * grid.horizon * mod.sup_lambda(grid.horizon)
    if mod.a is not None and mod.b is not None:
        report.k1 = growth_constant(coeffs, grid)
        report.c1 = moment_bound(report.k1, xi2, grid.horizon)
        with np.errstate(over="ignore"):
            report.c3 = float(report.c2 * mod.kappa(np.array([4.0 * report.c1]))[0]) \
                if math.isfinite(report.c1) else math.inf


def solve(coeffs: CoefficientSet, grid: TimeGrid, paths: int, tol: float = 1e-6,
          max_iter: int = 50, seed: int = 0, bundle: NoiseBundle | None = None,
          xi=None, min_iter: int = 0, keep_history: bool = False):
    """Iterate :func:`picard_step` from ``X_0 = xi`` until ``D(k, k+1) <= tol``.

    Returns ``(last iterate, ConvergenceReport)``.  ``min_iter`` forces at
    least that many steps before the stopping rule applies.  A
    :class:`DivergenceError` carries the report accumulated so far.
    """
    if not tol > 0:
        raise InputDomainError("tol must be positive")
    if paths < 2:
        raise InputDomainError("at least two paths are needed for standard errors")
    if max_iter < 0:
        raise InputDomainError("max_iter must be nonnegative")
    if bundle is None:
        bundle = make_bundle(coeffs, grid, paths, seed)
    elif bundle.grid != grid or bundle.path_count != paths:
        raise BundleMismatchError("bundle grid/path count differ from the requested ones")
    prev = initial_ensemble(coeffs, bundle, xi)
    report = ConvergenceReport(tol=tol)
    _constants(report, coeffs, grid, prev)
    m, s = second_moment_profile(prev)
    report.moments.append(m)
    report.moment_se.append(s)
    history = [prev] if keep_history else None
    for k in range(1, max_iter + 1):
        try:
            cur = picard_step(prev)
        except DivergenceError as exc:
            report.verdict = "diverged"
            exc.report = report
            raise
        dist, se = sup_distance(prev, cur)
        report.records.append(IterateRecord(k - 1, dist, se))
        m, s = second_moment_profile(cur)
        report.moments.append(m)
        report.moment_se.append(s)
        report.iterations = k
        if history is not None:
            history.append(cur)
        prev = cur
        if dist <= tol and k >= min_iter:
            report.verdict = "converged"
            break
    report.iterates = history
    return prev, report


def iterate(coeffs: CoefficientSet, bundle: NoiseBundle, n_iter: int, xi=None) -> IterateEnsemble:
    """Exactly ``n_iter`` Picard steps from ``X_0``, no stopping rule."""
    cur = initial_ensemble(coeffs, bundle, xi)
    for _ in range(n_iter):
        cur = picard_step(cur)
    return cur


@dataclass
class MomentBoundReport:
    bound: float
    empirical_max: float
    se_at_max: float
    k_at_max: int
    node_at_max: int
    k1: float
    xi_second_moment: float
    passed: bool
    strict_margin: bool
    horizon_assumption_ok: bool

    def to_dict(self):
        return dict(self.__dict__)


def moment_bound_check(source, coeffs: CoefficientSet, grid: TimeGrid | None = None,
                       max_k: int | None = None) -> MomentBoundReport:
    """Compare ``max_{k, t} E|X_k(t)|^2`` with ``4 (1 + E|xi|^2) exp(4 K1 T^2)``.

    ``source`` is a :class:`ConvergenceReport` (uses its recorded moment
    profiles), an :class:`IterateEnsemble`, or a sequence of ensembles.
    ``passed`` means empirical ``<= bound + 5 SE``; ``strict_margin`` means
    ``empirical + 5 SE <= bound``.  The bound is derived for ``T >= 1``;
    ``horizon_assumption_ok`` flags shorter horizons.
    """
    if isinstance(source, ConvergenceReport):
        moments, ses, xi2 = source.moments, source.moment_se, source.xi_second_moment
        ks = list(range(len(moments)))
    else:
        ens = [source] if isinstance(source, IterateEnsemble) else list(source)
        profiles = [second_moment_profile(e) for e in ens]
        moments = [p[0] for p in profiles]
        ses = [p[1] for p in profiles]
        ks = [e.k for e in ens]
        x0 = ens[0].xi
        xi2 = float(np.mean(np.sum(x0 * x0, axis=-1)))
        grid = grid or ens[0].grid
    if max_k is not None:
        keep = [i for i, k in enumerate(ks) if k <= max_k]
        moments, ses, ks = [moments[i] for i in keep], [ses[i] for i in keep], [ks[i] for i in keep]
    grid = grid or TimeGrid(coeffs.horizon, 256)
    k1 = growth_constant(coeffs, grid)
    bound = moment_bound(k1, xi2, coeffs.horizon)
    stack = np.vstack(moments)
    i, node = np.unravel_index(int(np.argmax(stack)), stack.shape)
    emp = float(stack[i, node])
    se = float(np.vstack(ses)[i, node])
    return MomentBoundReport(bound=bound, empirical_max=emp, se_at_max=se, k_at_max=int(ks[i]),
                             node_at_max=int(node), k1=k1, xi_second_moment=xi2,
                             passed=emp <= bound + 5 * se, strict_margin=emp + 5 * se <= bound,
                             horizon_assumption_ok=coeffs.horizon >= 1.0)


@dataclass
class UniquenessReport:
    iterations: int
    replay_max_diff: float
    permuted_max_diff: float
    other_seed_max_diff: float | None
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def pathwise_uniqueness_check(coeffs: CoefficientSet, grid: TimeGrid, paths: int, seed: int,
                              tol: float = 1e-6, max_iter: int = 50,
                              other_seed: int | None = None) -> UniquenessReport:
    """Deterministic-replay diagnostic for pathwise uniqueness.

    Solves twice with the same seed and initial law and requires identical
    trajectories; re-solves on a permuted path order and requires the same
    per-path trajectories; optionally solves with ``other_seed`` as a sanity
    inverse (the difference should be nonzero).

    Raises
    ------
    ReplayError
        If either replay differs: that is a determinism bug, not a finding.
    """
    first, rep = solve(coeffs, grid, paths, tol, max_iter, seed)
    second, _ = solve(coeffs, grid, paths, tol, max_iter, seed)
    replay = float(np.max(np.abs(first.states - second.states)))
    perm = np.random.default_rng(seed).permutation(paths)
    bundle = make_bundle(coeffs, grid, paths, seed, path_ids=perm)
    # Fixed iteration count: the stopping rule averages in a different order.
    shuffled = iterate(coeffs, bundle, rep.iterations)
    permuted = float(np.max(np.abs(shuffled.states - first.states[perm])))
    if replay != 0.0 or permuted != 0.0:
        raise ReplayError(f"replay differs: same-seed {replay:g}, permuted {permuted:g}")
    other = None
    if other_seed is not None:
        alt = iterate(coeffs, make_bundle(coeffs, grid, paths, other_seed), rep.iterations)
        other = float(np.max(np.abs(alt.states - first.states)))
    return UniquenessReport(rep.iterations, replay, permuted, other, True)
