"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class LevyPicardError(Exception):
    """Base class for all errors raised by :mod:`levy_picard`."""


class InputDomainError(LevyPicardError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class SamplingError(LevyPicardError):
    """Rejection sampling exhausted its attempt budget."""


class ModulusError(LevyPicardError, ValueError):
    """A concave modulus is invalid (vanishes, not monotone) or incomplete."""


class CoefficientEvaluationError(LevyPicardError):
    """A coefficient evaluator raised; carries the offending time and state."""

    def __init__(self, message: str, t=None, y=None):
        super().__init__(message)
        self.t = t
        self.y = y


class BundleMismatchError(LevyPicardError, ValueError):
    """Two iterate ensembles were not built on the same noise bundle."""


class DivergenceError(LevyPicardError, ArithmeticError):
    """A Picard iterate produced a non-finite state.

    Attributes
    ----------
    path, node, k : int
        First offending path index, grid node and iterate index.
    report : ConvergenceReport or None
        Everything recorded before the failure.
    """

    def __init__(self, message: str, path: int, node: int, k: int, report=None):
        super().__init__(message)
        self.path = path
        self.node = node
        self.k = k
        self.report = report


class ReplayError(LevyPicardError):
    """Deterministic replay produced different trajectories (a determinism bug)."""


class DomainError(LevyPicardError, ValueError):
    """Argument outside Dom(G^-1) for the Bihari function."""


class NoCertificateError(LevyPicardError):
    """No delta(eps) stability certificate exists or is representable."""


class ConfigError(LevyPicardError, ValueError):
    """Experiment configuration failed validation; ``errors`` lists every problem."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)
