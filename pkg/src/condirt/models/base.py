"""Common interface of joint densities over observations and parameters."""
from __future__ import annotations

import numpy as np

from ..errors import UnsupportedOperationError

__all__ = ["TargetDensity"]


class TargetDensity:
    """Unnormalized joint density of ``(y, theta)`` on a bounded box.

    Points are arrays of shape ``(m, d_y + d_theta)`` with observations first.
    Subclasses implement :meth:`log_joint` and usually :meth:`log_reference`,
    the product-form density built from the likelihood marginals at a nominal
    parameter and the prior marginals.

    Attributes
    ----------
    d_y, d_theta : int
    lower, upper : ndarray
        Corners of the support box.
    name : str
    """

    name = "target"

    def __init__(self, d_y, d_theta, lower, upper):
        self.d_y = int(d_y)
        self.d_theta = int(d_theta)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != (self.d,) or self.upper.shape != (self.d,):
            raise ValueError("box corners must have one entry per variable")
        if np.any(self.lower >= self.upper):
            raise ValueError("box must have positive width in every variable")

    @property
    def d(self):
        return self.d_y + self.d_theta

    @property
    def dims(self):
        return (self.d_y, self.d_theta)

    def split(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, : self.d_y], x[:, self.d_y :]

    def log_joint(self, x):
        raise NotImplementedError

    def log_reference(self, x):
        """Log of the product-form reference; uniform on the box by default."""
        x = np.atleast_2d(x)
        return np.full(x.shape[0], -np.sum(np.log(self.upper - self.lower)))

    def log_uniform(self, x):
        x = np.atleast_2d(x)
        return np.full(x.shape[0], -np.sum(np.log(self.upper - self.lower)))

    def log_base(self, x):
        """Density that the tempering sequence starts from, uniform on the box.

        A flat start keeps every bridging density heavier-tailed than the
        next one, so the ratios that later layers approximate stay bounded.
        """
        return self.log_uniform(x)

    def log_ratio(self, x):
        """``log(pi / rho)`` with ``rho`` the registered reference."""
        return self.log_joint(x) - self.log_reference(x)

    def grad_log_ratio(self, x):
        raise UnsupportedOperationError(
            f"{self.name} has no analytic gradient; use finite differences "
            "or the Gaussian closed form for the H matrices"
        )

    @property
    def has_gradient(self):
        return type(self).grad_log_ratio is not TargetDensity.grad_log_ratio

    def log_posterior(self, y, theta):
        """Unnormalized log conditional of ``theta`` given one observation ``y``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float).reshape(1, -1), (theta.shape[0], self.d_y))
        return self.log_joint(np.hstack([y, theta]))

    def sample_joint(self, n, rng):
        raise UnsupportedOperationError(f"{self.name} has no exact joint sampler")

    def sample_prior(self, n, rng):
        raise UnsupportedOperationError(f"{self.name} has no prior sampler")

    def in_box(self, x):
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)
