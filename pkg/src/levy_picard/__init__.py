"""Successive approximation for SDEs driven by small-jump Levy noise under a non-Lipschitz condition.

Modules
-------
noise
    Reproducible Brownian and compensated-jump noise bundles.
moduli, coefficients, scenarios
    Concave moduli, coefficient sets and their diagnostics.
picard
    The Picard iteration solver and its convergence diagnostics.
stability
    Bihari bounds, stability certificates and the mean-square stability test.
config, experiment, cli
    Configuration-driven experiment runner.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .coefficients import (CoefficientSet, InitialLaw, LevyModel, SamplerConfig, check_osgood,
                           growth_constant, verify_assumption1)
from .errors import (BundleMismatchError, CoefficientEvaluationError, ConfigError, DivergenceError,
                     DomainError, InputDomainError, LevyPicardError, ModulusError, NoCertificateError,
                     ReplayError, SamplingError)
from .moduli import (MODULI, ConcaveModulus, StepFunction, linear_modulus, log_modulus,
                     loglog_modulus, make_modulus, power_modulus)
from .noise import JumpMeasure, NoiseBundle, TimeGrid, substream
from .picard import (ConvergenceReport, IterateEnsemble, iterate, moment_bound_check,
                     pathwise_uniqueness_check, picard_step, solve, sup_distance)
from .scenarios import SCENARIOS, build_scenario
from .stability import (BihariBound, bihari_bound, bihari_G, bihari_G_inv, delta_for_epsilon,
                        mean_square_stability_test)
