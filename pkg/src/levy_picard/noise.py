"""Reproducible Brownian and Poisson-random-measure noise.

Every random quantity is drawn from a substream derived from one root seed
and a ``(purpose, path index)`` key through :class:`numpy.random.SeedSequence`
spawn keys feeding a counter-based Philox generator.  A path's noise therefore
depends only on ``(seed, path index)`` and never on how many other paths are
generated or in which order.

Brownian motion is built with the dyadic Levy (Brownian-bridge) construction:
level 0 draws ``B(T)``, each further level fills the midpoints of the previous
one.  Refining a grid from ``M`` to ``2M`` steps consumes the same leading
normals, so coarse node values are bit-identical across refinements.  Jump
events are sampled over the whole horizon (Poisson count, then uniform times),
so they do not depend on ``M`` either.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import InputDomainError, SamplingError

__all__ = [
    "JumpMeasure",
    "TimeGrid",
    "NoiseBundle",
    "substream",
    "sample_jump_count",
    "sample_prm",
    "compensator_drift",
    "brownian_path",
    "brownian_increments",
    "levy_ito_path",
]

_PURPOSES = {"brownian": 0, "jumps": 1, "xi": 2}
_MAX_SEED = 2**64


def _purpose_code(purpose: str) -> int:
    if purpose in _PURPOSES:
        return _PURPOSES[purpose]
    # Arbitrary names map to a stable 32-bit code outside the reserved range.
    return 1024 + zlib.crc32(purpose.encode("utf-8"))


def substream(seed: int, purpose: str, path: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, path)``."""
    if not 0 <= int(seed) < _MAX_SEED:
        raise InputDomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if int(path) < 0:
        raise InputDomainError(f"path index must be nonnegative, got {path}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_purpose_code(purpose), int(path)))
    return np.random.Generator(np.random.Philox(ss))


def _gauss_legendre_ball(dim: int, radius: float, order: int):
    """Nested Gauss-Legendre rule on the open ball ``{|x| < radius}`` in R^dim."""
    g, w = np.polynomial.legendre.leggauss(order)
    if dim == 1:
        return (radius * g)[:, None], radius * w
    nodes, weights = [], []
    for gi, wi in zip(g, w):
        x1 = radius * gi
        inner_r = math.sqrt(max(radius * radius - x1 * x1, 0.0))
        sub_n, sub_w = _gauss_legendre_ball(dim - 1, inner_r, order)
        nodes.append(np.column_stack([np.full(len(sub_w), x1), sub_n]))
        weights.append(radius * wi * sub_w)
    return np.vstack(nodes), np.concatenate(weights)


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """Finite Levy measure supported on the open ball ``{|x| < cutoff}``.

    Build with :meth:`atomic`, :meth:`from_density` or :meth:`empty`.
    Atomic measures integrate exactly; density measures use a bounded
    density with a rejection envelope and Gauss-Legendre integration.
    """

    cutoff: float
    dim: int
    total_mass: float
    marks: np.ndarray | None = None
    masses: np.ndarray | None = None
    density: Callable[[np.ndarray], np.ndarray] | None = None
    envelope: float | None = None
    quad_order: int = 48
    max_attempts: int = 10_000
    _rule: tuple = field(default=None, repr=False)

    @classmethod
    def atomic(cls, marks, masses, cutoff: float) -> "JumpMeasure":
        marks = np.asarray(marks, dtype=float)
        if marks.ndim <= 1:
            marks = marks.reshape(-1, 1)
        masses = np.asarray(masses, dtype=float).reshape(-1)
        if len(masses) != len(marks):
            raise InputDomainError("marks and masses must have the same length")
        _check_cutoff(cutoff)
        if not np.all(np.isfinite(masses)):
            raise InputDomainError("infinite-activity measures are not supported; masses must be finite")
        if np.any(masses <= 0):
            raise InputDomainError("atom masses must be strictly positive")
        norms = np.linalg.norm(marks, axis=1)
        if np.any(norms >= cutoff):
            bad = marks[np.argmax(norms)]
            raise InputDomainError(f"mark {bad.tolist()} violates |x| < cutoff={cutoff}")
        if np.any(norms == 0):
            raise InputDomainError("a Levy measure charges no mass at the origin")
        total = float(masses.sum())
        return cls(cutoff=float(cutoff), dim=marks.shape[1], total_mass=total,
                   marks=marks, masses=masses,
                   _rule=(marks, masses))

    @classmethod
    def empty(cls, cutoff: float = 1.0, dim: int = 1) -> "JumpMeasure":
        _check_cutoff(cutoff)
        return cls(cutoff=float(cutoff), dim=int(dim), total_mass=0.0,
                   marks=np.zeros((0, dim)), masses=np.zeros(0),
                   _rule=(np.zeros((0, dim)), np.zeros(0)))

    @classmethod
    def from_density(cls, density, cutoff: float, envelope: float, dim: int = 1,
                     total_mass: float | None = None, quad_order: int = 48,
                     max_attempts: int = 10_000) -> "JumpMeasure":
        """Measure ``density(x) dx`` on the ball.

        ``density`` takes an ``(n, dim)`` array and returns ``n`` nonnegative
        values bounded by ``envelope``.  ``total_mass`` is computed by
        quadrature when omitted.
        """
        _check_cutoff(cutoff)
        if not envelope > 0:
            raise InputDomainError("envelope must be positive")
        nodes, vol_w = _gauss_legendre_ball(dim, cutoff, quad_order)
        dens = np.asarray(density(nodes), dtype=float)
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise InputDomainError("density must be finite and nonnegative")
        weights = vol_w * dens
        if total_mass is None:
            if dim == 1:
                total_mass, _ = integrate.quad(lambda x: float(density(np.array([[x]]))[0]),
                                               -cutoff, cutoff, epsabs=1e-12, epsrel=1e-10)
            else:
                total_mass = float(weights.sum())
        if not np.isfinite(total_mass):
            raise InputDomainError("infinite-activity measures are not supported")
        if total_mass <= 0:
            raise InputDomainError("density measure must have positive total mass")
        return cls(cutoff=float(cutoff), dim=int(dim), total_mass=float(total_mass),
                   density=density, envelope=float(envelope), quad_order=quad_order,
                   max_attempts=max_attempts, _rule=(nodes, weights))

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    @property
    def is_empty(self) -> bool:
        return self.total_mass == 0.0

    def quadrature_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(n, dim)`` and weights ``(n,)`` with sum(w f(x)) ~ int f dnu."""
        return self._rule

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Integrate ``f`` against the measure; ``f`` maps ``(n, dim)`` marks to ``(n, ...)``."""
        nodes, weights = self._rule
        if len(weights) == 0:
            return np.asarray(0.0)
        vals = np.asarray(f(nodes), dtype=float)
        return np.tensordot(weights, vals, axes=(0, 0))

    def second_moment(self) -> float:
        """``int |x|^2 nu(dx)``."""
        return float(self.integrate(lambda x: np.sum(x * x, axis=1)))

    def to_dict(self) -> dict:
        if self.is_atomic:
            return {"kind": "atomic", "cutoff": self.cutoff, "dim": self.dim,
                    "marks": self.marks.tolist(), "masses": self.masses.tolist()}
        return {"kind": "density", "cutoff": self.cutoff, "dim": self.dim,
                "total_mass": self.total_mass, "envelope": self.envelope}


def _check_cutoff(cutoff):
    if not (np.isfinite(cutoff) and cutoff > 0):
        raise InputDomainError(f"cutoff must satisfy 0 < c < inf, got {cutoff}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / M`` on ``[0, T]`` with ``M`` a power of two."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise InputDomainError(f"horizon must be positive, got {self.horizon}")
        m = int(self.steps)
        if m < 1 or m & (m - 1):
            raise InputDomainError(f"steps must be a power of two, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def levels(self) -> int:
        return self.steps.bit_length() - 1

    def refine(self) -> "TimeGrid":
        return TimeGrid(self.horizon, 2 * self.steps)

    def step_of(self, tau) -> np.ndarray:
        """Index ``j`` of the step ``(t_j, t_{j+1}]`` containing each jump time."""
        j = np.ceil(np.asarray(tau, dtype=float) / self.dt).astype(np.int64) - 1
        return np.clip(j, 0, self.steps - 1)


def sample_jump_count(measure: JumpMeasure, horizon: float, stream: np.random.Generator) -> int:
    """Poisson number of jumps on an interval of length ``horizon``."""
    if horizon < 0:
        raise InputDomainError(f"horizon must be nonnegative, got {horizon}")
    lam = measure.total_mass * horizon
    if lam == 0:
        return 0
    return int(stream.poisson(lam))


def _sample_marks(measure: JumpMeasure, n: int, stream: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros((0, measure.dim))
    if measure.is_atomic:
        idx = stream.choice(len(measure.masses), size=n, p=measure.masses / measure.total_mass)
        return measure.marks[idx].copy()
    c, dim = measure.cutoff, measure.dim
    out = np.empty((n, dim))
    for i in range(n):
        for _ in range(measure.max_attempts):
            x = stream.uniform(-c, c, size=dim)
            u = stream.uniform()
            if np.dot(x, x) >= c * c:
                continue
            fx = float(measure.density(x[None, :])[0])
            if fx > measure.envelope:
                raise SamplingError(
                    f"density {fx:.6g} exceeds envelope={measure.envelope} at x={x.tolist()}")
            if u * measure.envelope < fx:
                out[i] = x
                break
        else:
            raise SamplingError(
                f"rejection sampling exceeded {measure.max_attempts} attempts "
                f"with envelope={measure.envelope}")
    return out


def sample_prm(measure: JumpMeasure, grid: TimeGrid, stream: np.random.Generator):
    """Jump events of the Poisson random measure on ``(0, T]``.

    Returns ``(times, marks)`` sorted by time, ``times`` of shape ``(n,)`` and
    ``marks`` of shape ``(n, dim)``.
    """
    n = sample_jump_count(measure, grid.horizon, stream)
    u = stream.random(n)
    times = np.sort(grid.horizon * (1.0 - u))  # in (0, T]
    marks = _sample_marks(measure, n, stream)
    return times, marks


def compensator_drift(measure: JumpMeasure, tol: float = 1e-10) -> np.ndarray:
    """``int_{|x|<c} x nu(dx)``, the drift removed by the compensated measure."""
    if measure.is_empty:
        return np.zeros(measure.dim)
    if measure.is_atomic:
        return measure.masses @ measure.marks
    if measure.dim == 1:
        c = measure.cutoff
        val, _ = integrate.quad(lambda x: x * float(measure.density(np.array([[x]]))[0]),
                                -c, c, epsabs=tol, epsrel=tol)
        return np.array([val])
    return np.asarray(measure.integrate(lambda x: x), dtype=float)


def brownian_path(grid: TimeGrid, r: int, stream: np.random.Generator) -> np.ndarray:
    """Brownian node values ``B(t_i)``, shape ``(M + 1, r)``, via dyadic bridge."""
    if r < 0:
        raise InputDomainError(f"Brownian dimension must be nonnegative, got {r}")
    m = grid.steps
    b = np.zeros((m + 1, r))
    if r == 0:
        return b
    b[m] = math.sqrt(grid.horizon) * stream.standard_normal(r)
    span = m
    while span > 1:
        half = span // 2
        left = b[0:m - span + 1:span]
        right = b[span::span]
        # Midpoint of a bridge over length h has variance h / 4.
        sd = math.sqrt(span * grid.dt / 4.0)
        z = stream.standard_normal((len(left), r))
        b[half::span] = 0.5 * (left + right) + sd * z
        span = half
    return b


def brownian_increments(grid: TimeGrid, r: int, stream: np.random.Generator) -> np.ndarray:
    """Per-step increments ``Delta B_i``, shape ``(M, r)``."""
    return np.diff(brownian_path(grid, r, stream), axis=0)


def levy_ito_path(b1, measure: JumpMeasure, grid: TimeGrid,
                  stream: np.random.Generator | tuple, r: int | None = None) -> np.ndarray:
    """Levy process at grid nodes: drift, Brownian part and compensated small jumps.

    ``stream`` is either one generator (Brownian part drawn first, then jumps)
    or a pair ``(brownian_stream, jump_stream)``.  ``r`` is the Brownian
    dimension, either ``len(b1)`` (the default) or 0 for no Brownian part.
    Returns shape ``(M + 1, len(b1))``.
    """
    b1 = np.atleast_1d(np.asarray(b1, dtype=float))
    d = len(b1)
    r = d if r is None else int(r)
    if r not in (0, d):
        raise InputDomainError(f"Brownian dimension must be 0 or {d}, got {r}")
    if not measure.is_empty and measure.dim != d:
        raise InputDomainError(f"mark dimension {measure.dim} differs from drift dimension {d}")
    bs, js = stream if isinstance(stream, tuple) else (stream, stream)
    t = grid.times
    path = t[:, None] * b1[None, :]
    if r:
        path = path + brownian_path(grid, r, bs)
    times, marks = sample_prm(measure, grid, js)
    if len(times):
        steps = grid.step_of(times)
        jumps = np.zeros((grid.steps + 1, d))
        np.add.at(jumps, steps + 1, marks)
        path += np.cumsum(jumps, axis=0)
    if not measure.is_empty:
        path -= t[:, None] * compensator_drift(measure)[None, :]
    return path


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Frozen common random numbers for an ensemble of paths.

    Attributes
    ----------
    brownian : ndarray, shape (P, M, r)
        Brownian increments per path and step.
    jump_path, jump_step : ndarray of int, shape (J,)
        Row (ensemble position) and grid step of each jump event.
    jump_time : ndarray, shape (J,)
        Jump times in ``(0, T]``, ascending within each path.
    jump_mark : ndarray, shape (J, m)
    """

    seed: int
    grid: TimeGrid
    r: int
    path_ids: np.ndarray
    brownian: np.ndarray
    jump_path: np.ndarray
    jump_step: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    measure: JumpMeasure | None = None

    @classmethod
    def generate(cls, seed: int, grid: TimeGrid, measure: JumpMeasure, r: int,
                 path_count: int | None = None, path_ids=None) -> "NoiseBundle":
        if path_ids is None:
            if path_count is None:
                raise InputDomainError("give path_count or path_ids")
            path_ids = np.arange(path_count)
        path_ids = np.asarray(path_ids, dtype=np.int64)
        p = len(path_ids)
        dB = np.empty((p, grid.steps, r))
        jp, jt, jm = [], [], []
        for row, pid in enumerate(path_ids):
            dB[row] = brownian_increments(grid, r, substream(seed, "brownian", pid))
            times, marks = sample_prm(measure, grid, substream(seed, "jumps", pid))
            jp.append(np.full(len(times), row, dtype=np.int64))
            jt.append(times)
            jm.append(marks)
        jump_time = np.concatenate(jt) if jt else np.zeros(0)
        jump_mark = np.vstack(jm) if jm else np.zeros((0, measure.dim))
        jump_path = np.concatenate(jp) if jp else np.zeros(0, dtype=np.int64)
        for arr in (dB, jump_time, jump_mark, jump_path, path_ids):
            arr.setflags(write=False)
        jump_step = grid.step_of(jump_time)
        jump_step.setflags(write=False)
        return cls(seed=int(seed), grid=grid, r=int(r), path_ids=path_ids, brownian=dB,
                   jump_path=jump_path, jump_step=jump_step, jump_time=jump_time,
                   jump_mark=jump_mark, measure=measure)

    @property
    def path_count(self) -> int:
        return len(self.path_ids)

    def stream(self, purpose: str, row: int) -> np.random.Generator:
        """Substream for an extra purpose (e.g. initial values) of ensemble row ``row``."""
        return substream(self.seed, purpose, int(self.path_ids[row]))

    def jumps_of(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.jump_path == row
        return self.jump_time[sel], self.jump_mark[sel]

    def key(self) -> tuple:
        """Identity of the realized noise, used to check that ensembles share it."""
        return (self.seed, self.grid, self.r, self.path_ids.tobytes(),
                self.jump_time.tobytes(), self.jump_mark.tobytes())

    def save(self, path) -> Path:
        """Write an ``.npz`` snapshot that :meth:`load` restores bit-exactly."""
        path = Path(path)
        meta = {"seed": self.seed, "horizon": self.grid.horizon, "steps": self.grid.steps,
                "r": self.r,
                "measure": None if self.measure is None else self.measure.to_dict()}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), path_ids=self.path_ids,
                     brownian=self.brownian, jump_path=self.jump_path,
                     jump_time=self.jump_time, jump_mark=self.jump_mark)
        return path

    @classmethod
    def load(cls, path, measure: JumpMeasure | None = None) -> "NoiseBundle":
        """Restore a snapshot.  Atomic measures are rebuilt from the file."""
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in ("path_ids", "brownian", "jump_path", "jump_time", "jump_mark")}
        grid = TimeGrid(meta["horizon"], meta["steps"])
        m = meta["measure"]
        if measure is None and m is not None and m["kind"] == "atomic":
            if m["masses"]:
                measure = JumpMeasure.atomic(m["marks"], m["masses"], m["cutoff"])
            else:
                measure = JumpMeasure.empty(m["cutoff"], m["dim"])
        for arr in arrays.values():
            arr.setflags(write=False)
        step = grid.step_of(arrays["jump_time"])
        step.setflags(write=False)
        return cls(seed=meta["seed"], grid=grid, r=meta["r"], jump_step=step,
                   measure=measure, **arrays)
