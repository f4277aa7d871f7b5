"""Susceptible-infected-recovered epidemic with noisy infection counts."""
from __future__ import annotations

import numpy as np

from .base import TargetDensity
from .ode import dopri45

__all__ = ["SirModel", "solve_sir", "sir_target", "sir_rhs"]

OBS_TIMES = (1.25, 2.5, 3.75, 5.0)


def sir_rhs(t, state, params):
    s, i = state[:, 0], state[:, 1]
    beta, gamma = params[:, 0], params[:, 1]
    infect = beta * s * i
    recover = gamma * i
    return np.column_stack([-infect, infect - recover, recover])


def solve_sir(beta, gamma, t_grid=OBS_TIMES, tol=1e-6, s0=99.0, i0=1.0, r0=0.0, full=False):
    """Infected counts at ``t_grid`` for each ``(beta, gamma)`` pair.

    Parameters
    ----------
    beta, gamma : array_like
        Infection and recovery rates, broadcast against each other.
    tol : float
        Relative tolerance of the Dormand-Prince integrator.
    full : bool
        Return the whole state ``(S, I, R)`` with shape ``(m, len(t_grid), 3)``.

    Returns
    -------
    ndarray, shape (m, len(t_grid))
    """
    beta, gamma = np.broadcast_arrays(np.atleast_1d(np.asarray(beta, float)),
                                      np.atleast_1d(np.asarray(gamma, float)))
    params = np.column_stack([beta.ravel(), gamma.ravel()])
    y0 = np.tile([s0, i0, r0], (params.shape[0], 1))
    states = dopri45(sir_rhs, y0, t_grid, rtol=tol, params=params)
    states = np.moveaxis(states, 0, 1)
    return states if full else states[:, :, 1]


class SirModel(TargetDensity):
    """Joint density of four noisy infection counts and the rates ``(beta, gamma)``.

    The prior is uniform on ``[0, 2]^2`` and observations are
    ``I(t_i) + e_i`` with standard normal noise, restricted to ``[0, 100]``.
    The reference used for the H matrices takes the likelihood at the prior
    mean ``(1, 1)``; tempering starts from the uniform density on the box.
    """

    name = "sir"

    def __init__(self, t_obs=OBS_TIMES, noise_std=1.0, ode_tolerance=1e-6,
                 y_range=(0.0, 100.0), theta_range=(0.0, 2.0), theta0=(1.0, 1.0)):
        self.t_obs = tuple(float(t) for t in t_obs)
        d_y = len(self.t_obs)
        lower = [y_range[0]] * d_y + [theta_range[0]] * 2
        upper = [y_range[1]] * d_y + [theta_range[1]] * 2
        super().__init__(d_y, 2, lower, upper)
        self.noise_std = float(noise_std)
        self.ode_tolerance = float(ode_tolerance)
        self.theta0 = np.asarray(theta0, dtype=float)
        self._i0 = self.forward(self.theta0[None, :])[0]
        self.solve_count = 0

    def forward(self, theta):
        """Infected counts at the observation times, shape ``(m, d_y)``."""
        theta = np.atleast_2d(theta)
        uniq, inverse = np.unique(theta, axis=0, return_inverse=True)
        self.solve_count = getattr(self, "solve_count", 0) + uniq.shape[0]
        vals = solve_sir(uniq[:, 0], uniq[:, 1], self.t_obs, self.ode_tolerance)
        return vals[inverse.reshape(-1)]

    def log_likelihood(self, y, theta):
        r = (np.atleast_2d(y) - self.forward(theta)) / self.noise_std
        return -0.5 * np.sum(r**2, axis=1) - self.d_y * np.log(np.sqrt(2 * np.pi) * self.noise_std)

    def log_prior(self, theta):
        theta = np.atleast_2d(theta)
        lo, hi = self.lower[self.d_y :], self.upper[self.d_y :]
        return np.full(theta.shape[0], -np.sum(np.log(hi - lo)))

    def log_joint(self, x):
        y, theta = self.split(x)
        return self.log_likelihood(y, theta) + self.log_prior(theta)

    def log_reference(self, x):
        y, theta = self.split(x)
        r = (y - self._i0) / self.noise_std
        ll = -0.5 * np.sum(r**2, axis=1) - self.d_y * np.log(np.sqrt(2 * np.pi) * self.noise_std)
        return ll + self.log_prior(theta)

    def sample_prior(self, n, rng):
        lo, hi = self.lower[self.d_y :], self.upper[self.d_y :]
        return lo + (hi - lo) * rng.random((n, 2))

    def sample_joint(self, n, rng, truncate=True):
        """Prior draws with synthetic data.

        With ``truncate`` the draws follow the joint density restricted to the
        box, by rejecting observations outside it; posteriors of observations
        inside the box are unaffected by the restriction.
        """
        if not truncate:
            theta = self.sample_prior(n, rng)
            y = self.forward(theta) + self.noise_std * rng.standard_normal((n, self.d_y))
            return np.hstack([y, theta])
        out = np.empty((0, self.d))
        while out.shape[0] < n:
            m = max(2 * (n - out.shape[0]), 16)
            x = self.sample_joint(m, rng, truncate=False)
            out = np.vstack([out, x[self.in_box(x)]])
        return out[:n]

    def synthetic_data(self, theta, rng):
        theta = np.atleast_2d(theta)
        return self.forward(theta) + self.noise_std * rng.standard_normal((theta.shape[0], self.d_y))


def sir_target(**kwargs):
    return SirModel(**kwargs)
