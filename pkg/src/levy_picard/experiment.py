"""Run configured diagnostics and write reports, plot tables and a manifest.

Every report file is a pure function of the validated config (which carries
the seed); the wall-clock timestamp and library versions live only in
``manifest.json``.  Exit codes:

==  ==========================================
0   every enabled diagnostic passed
1   at least one diagnostic failed
2   configuration error
3   the Picard solver diverged
==  ==========================================
"""

from __future__ import annotations

import json
import math
import platform
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .coefficients import (CoefficientSet, InitialLaw, SamplerConfig, check_osgood,
                           verify_assumption1)
from .config import ExperimentConfig
from .errors import DivergenceError, LevyPicardError, NoCertificateError, ReplayError
from .noise import TimeGrid
from .picard import (ConvergenceReport, make_bundle, moment_bound_check,
                     pathwise_uniqueness_check, solve)
from .scenarios import build_scenario
from .stability import delta_for_epsilon, mean_square_stability_test

__all__ = ["EXIT_OK", "EXIT_FAILED", "EXIT_CONFIG", "EXIT_DIVERGED", "Table", "DiagnosticResult",
           "RunResult", "run_experiment", "emit_plot_data", "refinement_study"]

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


@dataclass
class Table:
    """Plot-data table: one header line, one tab-separated record per row."""

    name: str
    columns: list
    rows: list
    doc: dict = field(default_factory=dict)

    def render(self) -> str:
        lines = ["\t".join(self.columns)]
        lines += ["\t".join(_fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    return repr(float(v))


@dataclass
class DiagnosticResult:
    name: str
    passed: bool
    report: dict
    table: Table | None = None
    message: str = ""


@dataclass
class RunResult:
    exit_code: int
    results: list
    output: Path
    files: list
    failed: list
    warnings: list


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# individual diagnostics ---------------------------------------------------

def _assumption1(cfg: ExperimentConfig, coeffs: CoefficientSet) -> DiagnosticResult:
    rep = verify_assumption1(coeffs, SamplerConfig(**cfg.sampler), tol=cfg.assumption1_tol)
    msg = "" if rep.passed else (f"{rep.violations} of {rep.pairs} pairs violate the modulus bound; "
                                 f"worst pair y1={rep.worst_y1}, y2={rep.worst_y2}")
    return DiagnosticResult("assumption1", rep.passed, rep.to_dict(), message=msg)


def _osgood(coeffs: CoefficientSet) -> DiagnosticResult:
    ev = check_osgood(coeffs.modulus)
    growth = [None] + list(ev.growth_per_decade)
    table = Table("osgood", ["eps", "integral", "growth_per_decade"],
                  [[e, i, g] for e, i, g in zip(ev.eps, ev.integrals, growth)],
                  {"eps": "lower integration limit", "integral": "int_eps^1 dq / kappa(q)",
                   "growth_per_decade": "integral increase per decade of eps (nan on the first row)"})
    passed = ev.verdict == "divergent"
    return DiagnosticResult("osgood", passed, {**ev.to_dict(), "modulus": coeffs.modulus.describe()},
                            table, "" if passed else "integral of 1/kappa appears to converge at 0+")


def _cauchy(report: ConvergenceReport) -> DiagnosticResult:
    recs = report.records
    mono = all(b.distance <= a.distance + 5 * math.hypot(a.se, b.se)
               for a, b in zip(recs[1:], recs[2:]))
    passed = report.verdict == "converged" and mono
    table = Table("distances", ["k", "D", "SE"], [[r.k, r.distance, r.se] for r in recs],
                  {"k": "iterate index", "D": "estimate of E sup_t |X_{k+1}(t) - X_k(t)|^2",
                   "SE": "Monte Carlo standard error of D"})
    msg = ""
    if report.verdict != "converged":
        msg = f"no convergence to tol {report.tol:g} within {report.iterations} iterations"
    elif not mono:
        msg = "successive distances increase beyond 5 standard errors"
    return DiagnosticResult("cauchy", passed, {**report.to_dict(), "nonincreasing_within_5se": mono},
                            table, msg)


def _moments(report: ConvergenceReport, coeffs: CoefficientSet, grid: TimeGrid) -> DiagnosticResult:
    rep = moment_bound_check(report, coeffs, grid)
    stack = np.vstack(report.moments)
    ses = np.vstack(report.moment_se)
    kmax = np.argmax(stack, axis=0)
    cols = np.arange(stack.shape[1])
    rows = [[t, m, s, rep.bound] for t, m, s in zip(grid.times, stack[kmax, cols], ses[kmax, cols])]
    table = Table("moments", ["t", "second_moment", "SE", "bound"], rows,
                  {"t": "grid time", "second_moment": "max over iterates k of estimated E|X_k(t)|^2",
                   "SE": "standard error at the maximizing iterate",
                   "bound": "4 (1 + E|xi|^2) exp(4 K1 T^2)"})
    msg = "" if rep.passed else f"empirical {rep.empirical_max:.6g} exceeds bound {rep.bound:.6g}"
    return DiagnosticResult("moment_bound", rep.passed, rep.to_dict(), table, msg)


def refinement_study(coeffs: CoefficientSet, horizon: float, steps: int, paths: int, seed: int,
                     tol: float = 1e-6, max_iter: int = 50, min_iter: int = 0, levels: int = 3,
                     finest=None) -> dict:
    """Mean of ``X(T)`` on nested grids ``steps / 2^j`` sharing one noise realization.

    The discretization error at the finest grid is estimated from successive
    differences ``d1, d2`` of the means: with ratio ``rho = d1 / d2 > 1`` the
    geometric tail gives ``|d2| / (rho - 1) = C dt``.  ``finest`` may pass an
    already converged ensemble on the finest grid.
    """
    ms = [steps >> j for j in reversed(range(levels))]
    if ms[0] < 1 or any(m & (m - 1) for m in ms):
        raise LevyPicardError(f"refinement needs {levels} dyadic levels below M={steps}")
    means, ses = [], []
    for m in ms:
        grid = TimeGrid(horizon, m)
        if finest is not None and m == steps:
            sol = finest
        else:
            sol, _ = solve(coeffs, grid, paths, tol, max_iter, bundle=make_bundle(coeffs, grid, paths, seed),
                           min_iter=min_iter)
        end = sol.states[:, -1, :]
        means.append(end.mean(axis=0))
        ses.append(end.std(axis=0, ddof=1) / math.sqrt(end.shape[0]))
    means, ses = np.array(means), np.array(ses)
    d = np.diff(means, axis=0)
    d1, d2 = d[-2], d[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d2 != 0, d1 / np.where(d2 != 0, d2, 1.0), np.nan)
    both_zero = (d1 == 0) & (d2 == 0)
    tail = np.where(both_zero, 0.0,
                    np.where(ratio > 1, np.abs(d2) / np.where(ratio > 1, ratio - 1, 1.0),
                             np.abs(d1) + np.abs(d2)))
    dt = horizon / steps
    exact = None
    if coeffs.analytic_mean is not None:
        exact = np.asarray(coeffs.analytic_mean(np.array(horizon)), dtype=float).reshape(-1)
    return {"steps": ms, "means": means, "se": ses, "d1": d1, "d2": d2, "ratio": ratio,
            "C": tail / dt, "C_dt": tail, "dt": dt, "exact": exact}


def _analytic_mean(cfg: ExperimentConfig, coeffs: CoefficientSet, finest) -> DiagnosticResult:
    if coeffs.analytic_mean is None:
        return DiagnosticResult("analytic_mean", False, {},
                                message=f"scenario {coeffs.name!r} has no analytic mean")
    st = refinement_study(coeffs, cfg.horizon, cfg.steps, cfg.paths, cfg.seed, cfg.solver_tol,
                          cfg.max_iter, cfg.min_iter, finest=finest)
    exact = st["exact"]
    err = np.abs(st["means"][-1] - exact)
    allowed = 3 * st["se"][-1] + st["C_dt"]
    passed = bool(np.all(err <= allowed))
    rows = []
    for j, m in enumerate(st["steps"]):
        for c in range(len(exact)):
            rows.append([m, cfg.horizon / m, c, st["means"][j, c], st["se"][j, c], exact[c],
                         st["means"][j, c] - exact[c]])
    table = Table("refinement", ["M", "dt", "component", "mean", "SE", "exact", "error"], rows,
                  {"M": "grid steps", "dt": "step size", "component": "state component",
                   "mean": "estimated E X(T)", "SE": "standard error of the mean",
                   "exact": "analytic E X(T)", "error": "mean - exact"})
    report = {"error": err, "allowed": allowed, "C": st["C"], "ratio": st["ratio"],
              "d1": st["d1"], "d2": st["d2"], "levels": st["steps"]}
    msg = "" if passed else f"|mean - exact| = {err.max():.3g} exceeds 3 SE + C dt"
    return DiagnosticResult("analytic_mean", passed, report, table, msg)


def _uniqueness(cfg: ExperimentConfig, coeffs: CoefficientSet, grid: TimeGrid) -> DiagnosticResult:
    try:
        rep = pathwise_uniqueness_check(coeffs, grid, cfg.paths, cfg.seed, cfg.solver_tol,
                                        cfg.max_iter, other_seed=cfg.seed + 1)
    except ReplayError as exc:
        return DiagnosticResult("uniqueness", False, {"error": str(exc)}, message=str(exc))
    return DiagnosticResult("uniqueness", rep.passed, rep.to_dict())


def _shifted(law: InitialLaw, shift: np.ndarray) -> InitialLaw:
    if law.sampler is None:
        return InitialLaw.point(law.value + shift)
    base = law.sampler
    return InitialLaw(sampler=lambda rng, d: np.asarray(base(rng, d), dtype=float) + shift)


def _stability(cfg: ExperimentConfig, coeffs: CoefficientSet, grid: TimeGrid) -> DiagnosticResult:
    reports, rows, failed = [], [], []
    for eps in cfg.diagnostics.stability_eps:
        try:
            delta = delta_for_epsilon(coeffs.modulus, cfg.horizon, eps)
            # Half the admissible squared gap: 4 g^2 = delta / 2.
            g = math.sqrt(delta / 8.0)
        except NoCertificateError:
            g = 1e-3 * math.sqrt(eps)
        shift = np.zeros(coeffs.d)
        shift[0] = g
        rep = mean_square_stability_test(coeffs, coeffs.xi, _shifted(coeffs.xi, shift), grid, cfg.paths,
                                         eps, seed=cfg.seed, tol=cfg.solver_tol, max_iter=cfg.max_iter,
                                         sampler_config=SamplerConfig(**cfg.sampler))
        reports.append(rep.to_dict())
        rows.append([eps, rep.delta, rep.initial_gap, rep.estimate, rep.se,
                     rep.estimate - rep.initial_gap, rep.precondition_held, rep.passed])
        if not rep.passed:
            failed.append(eps)
    table = Table("stability", ["eps", "delta", "gap", "measured", "SE", "excess", "precondition", "pass"],
                  rows, {"eps": "target bound on E sup |X^xi - X^eta|^2",
                         "delta": "certified delta(eps) (nan if no certificate)",
                         "gap": "E|xi - eta|^2 used", "measured": "estimated E sup_t |X^xi - X^eta|^2",
                         "SE": "standard error of measured", "excess": "measured - gap",
                         "precondition": "4 gap <= delta", "pass": "measured <= eps + 5 SE"})
    msg = f"measured gap exceeds eps for eps in {failed}" if failed else ""
    return DiagnosticResult("stability", not failed, {"sweep": reports}, table, msg)


# orchestration ------------------------------------------------------------

_SOLVER_DIAGS = {"cauchy", "moment_bound", "analytic_mean", "uniqueness", "stability"}


def emit_plot_data(results, directory) -> list[Path]:
    """Write every available plot table as ``<name>.tsv`` under ``directory``."""
    directory = Path(directory)
    tables = [r.table for r in results if r.table is not None]
    if not tables:
        return []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for tab in tables:
            path = directory / f"{tab.name}.tsv"
            path.write_text(tab.render())
            out.append(path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write plot data to {directory}: {exc.strerror}") from None
    return out


def _versions() -> dict:
    return {"levy_picard": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def run_experiment(cfg: ExperimentConfig, output=None, log=None) -> RunResult:
    """Run every enabled diagnostic for ``cfg`` and write its files.

    Writes ``manifest.json``, one ``<diagnostic>.json`` report per enabled
    diagnostic and the plot tables of :func:`emit_plot_data` into ``output``
    (default ``cfg.output``).
    """
    log = log or (lambda msg: None)
    out = Path(output or cfg.output)
    enabled = cfg.diagnostics.enabled()
    warnings: list[str] = []
    results: list[DiagnosticResult] = []
    exit_code = EXIT_OK
    divergence = None

    coeffs = build_scenario(cfg.scenario, cfg.params, cfg.horizon, cfg.modulus)
    grid = TimeGrid(cfg.horizon, cfg.steps)

    if not enabled:
        warnings.append("no diagnostics enabled; no report files written")
    if "assumption1" in enabled:
        log("assumption1: sampling coefficient pairs")
        results.append(_assumption1(cfg, coeffs))
    if "osgood" in enabled:
        log("osgood: tabulating the inverse-modulus integral")
        results.append(_osgood(coeffs))

    if _SOLVER_DIAGS & set(enabled):
        log(f"solver: {cfg.paths} paths, M={cfg.steps}, seed={cfg.seed}")
        bundle = make_bundle(coeffs, grid, cfg.paths, cfg.seed)
        try:
            sol, conv = solve(coeffs, grid, cfg.paths, cfg.solver_tol, cfg.max_iter,
                              bundle=bundle, min_iter=cfg.min_iter)
        except DivergenceError as exc:
            divergence = exc
            exit_code = EXIT_DIVERGED
            rep = exc.report.to_dict() if exc.report is not None else {}
            rep.update({"path": exc.path, "node": exc.node, "k": exc.k, "error": str(exc)})
            results.append(DiagnosticResult("cauchy", False, rep, message=str(exc)))
        else:
            if "cauchy" in enabled:
                results.append(_cauchy(conv))
            if "moment_bound" in enabled:
                log("moment_bound: comparing second moments with the a priori bound")
                results.append(_moments(conv, coeffs, grid))
            if "analytic_mean" in enabled:
                log("analytic_mean: refinement study")
                results.append(_analytic_mean(cfg, coeffs, sol))
            if "uniqueness" in enabled:
                log("uniqueness: deterministic replay")
                results.append(_uniqueness(cfg, coeffs, grid))
            if "stability" in enabled:
                log(f"stability: sweep over eps={cfg.diagnostics.stability_eps}")
                results.append(_stability(cfg, coeffs, grid))

    failed = [r.name for r in results if not r.passed]
    if exit_code == EXIT_OK and failed:
        exit_code = EXIT_FAILED

    out.mkdir(parents=True, exist_ok=True)
    files = []
    for r in results:
        path = out / f"{r.name}.json"
        path.write_text(_dump({"diagnostic": r.name, "passed": r.passed, "message": r.message,
                               "report": r.report}))
        files.append(path)
    files += emit_plot_data(results, out)

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": _versions(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": sys.argv,
        "diagnostics": {r.name: {"passed": r.passed, "message": r.message} for r in results},
        "failed": failed,
        "diverged": divergence is not None,
        "exit_code": exit_code,
        "files": sorted(p.name for p in files),
        "columns": {r.table.name: r.table.doc for r in results if r.table is not None},
        "warnings": warnings,
    }
    (out / "manifest.json").write_text(_dump(manifest))
    return RunResult(exit_code, results, out, files, failed, warnings)
