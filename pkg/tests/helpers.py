"""Small coefficient-set builders shared by the tests."""

from __future__ import annotations

import numpy as np

from levy_picard.coefficients import CoefficientSet, InitialLaw, LevyModel
from levy_picard.moduli import linear_modulus
from levy_picard.noise import JumpMeasure


def scalar_set(drift=None, diffusion=None, jump=None, xi=0.0, horizon=1.0, modulus=None,
               measure=None, r=1):
    """Scalar SDE with the given evaluators; ``r = 0`` drops the Brownian part."""
    measure = measure or JumpMeasure.empty(1.0)
    return CoefficientSet(1, r, horizon, drift, diffusion, jump, InitialLaw.point([xi]),
                          LevyModel(measure, r), modulus or linear_modulus(1.0))


def ou_set(a=1.0, sigma=0.3, xi=1.0, mark=0.1, mass=1.0, horizon=1.0):
    measure = JumpMeasure.atomic([mark], [mass], 1.0)
    return scalar_set(lambda t, y: -a * y, lambda t, y: sigma, lambda t, y, x: x, xi, horizon,
                      linear_modulus(a * a), measure)


def hoelder(t, y):
    return np.abs(y) ** 0.25
