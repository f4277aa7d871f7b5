"""One-dimensional diffusion with a Haar-wavelet log-coefficient and Laplace prior.

The forward model solves ``-(kappa u')' = 1`` on ``[0, 1]`` with homogeneous
Dirichlet conditions by second-order finite differences with ``kappa``
sampled at cell midpoints. For coefficients that are constant on every cell
the discrete solution is exact at the nodes.
"""
from __future__ import annotations

import numpy as np

from .base import TargetDensity

__all__ = ["Diffusion1D", "diffusion1d_target", "haar_features", "solve_diffusion", "stiffness_matrix"]


def haar_features(x, n_theta, r=2.0):
    """Scaled Haar wavelets ``2^{-r j} psi(2^j x - k)`` at points ``x``.

    Columns run level by level, ``(j, k) = (0, 0), (1, 0), (1, 1), (2, 0), ...``.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    j = 0
    while len(cols) < n_theta:
        for k in range(2**j):
            if len(cols) == n_theta:
                break
            s = 2.0**j * x - k
            psi = np.where((s >= 0) & (s < 0.5), 1.0, 0.0) - np.where((s >= 0.5) & (s < 1.0), 1.0, 0.0)
            cols.append(2.0 ** (-r * j) * psi)
        j += 1
    return np.stack(cols, axis=-1)


def stiffness_matrix(kappa_mid):
    """Diagonal and off-diagonal of the finite-difference operator on interior nodes.

    Row ``i`` of the symmetric tridiagonal operator is
    ``(-k_{i-1/2}, k_{i-1/2} + k_{i+1/2}, -k_{i+1/2}) / h**2`` for midpoint
    coefficients ``k`` of shape ``(m, n)``.
    """
    kappa_mid = np.atleast_2d(kappa_mid)
    h = 1.0 / kappa_mid.shape[1]
    diag = (kappa_mid[:, :-1] + kappa_mid[:, 1:]) / h**2
    off = -kappa_mid[:, 1:-1] / h**2
    return diag, off


def solve_diffusion(kappa_mid):
    """Nodal solutions with unit source, boundary zeros included, shape ``(m, n + 1)``.

    The tridiagonal systems are solved together by forward elimination and
    back substitution, vectorized over the batch.
    """
    diag, off = stiffness_matrix(kappa_mid)
    m, n = diag.shape
    c = np.zeros((m, n))
    d = np.zeros((m, n))
    denom = diag[:, 0]
    if n > 1:
        c[:, 0] = off[:, 0] / denom
    d[:, 0] = 1.0 / denom
    for i in range(1, n):
        denom = diag[:, i] - off[:, i - 1] * c[:, i - 1]
        if i < n - 1:
            c[:, i] = off[:, i] / denom
        d[:, i] = (1.0 - off[:, i - 1] * d[:, i - 1]) / denom
    out = np.zeros((m, n + 2))
    out[:, n] = d[:, n - 1]
    for i in range(n - 2, -1, -1):
        out[:, i + 1] = d[:, i] - c[:, i] * out[:, i + 2]
    return out


class Diffusion1D(TargetDensity):
    """Noisy point observations of the diffusion solution.

    Parameters
    ----------
    n_theta : int
        Number of Haar coefficients (8 to 24).
    n_obs : int
        Number of equispaced interior observation points (4 to 16).
    gamma_laplace : float
        Rate of the Laplace prior ``exp(-gamma |theta_i|)``.
    n_cells : int
        Finite-difference cells.
    snr : float
        Noise standard deviation is ``max|u(0)| / snr``.
    """

    name = "diffusion1d"

    def __init__(self, n_theta=15, n_obs=7, gamma_laplace=1.0, n_cells=64, c0=0.0, r=2.0,
                 snr=5.0, theta_bound=6.0, y_sd=5.0):
        if not 8 <= n_theta <= 24:
            raise ValueError("n_theta must lie in [8, 24]")
        if not 4 <= n_obs <= 16:
            raise ValueError("n_obs must lie in [4, 16]")
        self.n_theta = int(n_theta)
        self.n_obs = int(n_obs)
        self.gamma_laplace = float(gamma_laplace)
        self.n_cells = int(n_cells)
        self.c0 = float(c0)
        self.r = float(r)
        self.nodes = np.linspace(0.0, 1.0, self.n_cells + 1)
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        self._features = haar_features(mid, self.n_theta, self.r)
        self.x_obs = np.arange(1, self.n_obs + 1) / (self.n_obs + 1)
        u0 = self.solution(np.zeros((1, self.n_theta)))[0]
        self.noise_std = float(np.max(np.abs(u0)) / snr)
        self._u_ref = self._observe(u0[None, :])[0]
        # The observation box covers forward outputs of prior draws from a fixed stream.
        probe = np.random.default_rng(12345).laplace(0.0, 1.0 / self.gamma_laplace,
                                                      (2000, self.n_theta))
        probe = np.clip(probe, -theta_bound, theta_bound)
        out = self.forward(probe)
        lo = np.quantile(out, 0.001, axis=0) - y_sd * self.noise_std
        hi = np.quantile(out, 0.999, axis=0) + y_sd * self.noise_std
        lower = np.concatenate([lo, np.full(self.n_theta, -theta_bound)])
        upper = np.concatenate([hi, np.full(self.n_theta, theta_bound)])
        super().__init__(self.n_obs, self.n_theta, lower, upper)

    def log_kappa(self, theta):
        return self.c0 + np.atleast_2d(theta) @ self._features.T

    def solution(self, theta):
        return solve_diffusion(np.exp(self.log_kappa(theta)))

    def _observe(self, u):
        pos = self.x_obs * self.n_cells
        j = np.minimum(np.floor(pos).astype(int), self.n_cells - 1)
        t = pos - j
        return (1.0 - t) * u[:, j] + t * u[:, j + 1]

    def forward(self, theta):
        return self._observe(self.solution(theta))

    def log_prior(self, theta):
        theta = np.atleast_2d(theta)
        g = self.gamma_laplace
        return np.sum(np.log(0.5 * g) - g * np.abs(theta), axis=1)

    def log_likelihood(self, y, theta):
        r = (np.atleast_2d(y) - self.forward(theta)) / self.noise_std
        return -0.5 * np.sum(r**2, axis=1) - self.d_y * np.log(np.sqrt(2 * np.pi) * self.noise_std)

    def log_joint(self, x):
        y, theta = self.split(x)
        return self.log_likelihood(y, theta) + self.log_prior(theta)

    def log_reference(self, x):
        y, theta = self.split(x)
        r = (y - self._u_ref) / self.noise_std
        ll = -0.5 * np.sum(r**2, axis=1) - self.d_y * np.log(np.sqrt(2 * np.pi) * self.noise_std)
        return ll + self.log_prior(theta)

    def sample_prior(self, n, rng):
        return rng.laplace(0.0, 1.0 / self.gamma_laplace, (n, self.n_theta))

    def sample_joint(self, n, rng):
        theta = self.sample_prior(n, rng)
        y = self.forward(theta) + self.noise_std * rng.standard_normal((n, self.d_y))
        return np.hstack([y, theta])


def diffusion1d_target(n_theta=15, gamma_laplace=1.0, n_obs=7, **kwargs):
    return Diffusion1D(n_theta=n_theta, n_obs=n_obs, gamma_laplace=gamma_laplace, **kwargs)
