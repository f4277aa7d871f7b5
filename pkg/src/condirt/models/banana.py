"""Curved two-dimensional test density."""
from __future__ import annotations

import numpy as np

from .base import TargetDensity

__all__ = ["Banana", "banana_target"]


class Banana(TargetDensity):
    """``theta_1 ~ N(0, 1)`` and ``theta_2 | theta_1 ~ N(theta_1**2, sigma**2)``.

    The density is normalized on the plane, so its mass on the box is one
    up to the tails cut off by the box. There are no observations. The
    reference is the product of normals matching the two marginal means and
    variances, ``N(0, 1)`` and ``N(1, 2 + sigma**2)``, which keeps
    ``log(pi / rho)`` bounded above on the box.
    """

    name = "banana"

    def __init__(self, sigma=0.3, lower=(-4.0, -2.0), upper=(4.0, 17.0)):
        super().__init__(0, 2, lower, upper)
        self.sigma = float(sigma)
        self._ref_mean = np.array([0.0, 1.0])
        self._ref_var = np.array([1.0, 2.0 + self.sigma**2])

    def log_joint(self, x):
        x = np.atleast_2d(x)
        t1, t2 = x[:, 0], x[:, 1]
        s = self.sigma
        return (
            -0.5 * t1**2
            - 0.5 * ((t2 - t1**2) / s) ** 2
            - np.log(2 * np.pi * s)
        )

    def log_reference(self, x):
        x = np.atleast_2d(x)
        r = (x - self._ref_mean) ** 2 / self._ref_var
        return -0.5 * np.sum(r + np.log(2 * np.pi * self._ref_var), axis=1)

    def grad_log_ratio(self, x):
        x = np.atleast_2d(x)
        t1, t2 = x[:, 0], x[:, 1]
        resid = (t2 - t1**2) / self.sigma**2
        g = np.column_stack([-t1 + 2 * t1 * resid, -resid])
        return g + (x - self._ref_mean) / self._ref_var

    def sample_joint(self, n, rng):
        t1 = rng.standard_normal(n)
        t2 = t1**2 + self.sigma * rng.standard_normal(n)
        return np.column_stack([t1, t2])

    sample_prior = sample_joint


def banana_target(sigma=0.3, lower=(-4.0, -2.0), upper=(4.0, 17.0)):
    return Banana(sigma, lower, upper)
