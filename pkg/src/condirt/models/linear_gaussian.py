"""Linear-Gaussian inverse problem with closed-form posterior."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .base import TargetDensity

__all__ = ["LinearGaussian", "linear_gaussian_target", "random_linear_gaussian"]


def _sqrtm_spd(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.T


class LinearGaussian(TargetDensity):
    """``y = G theta + offset + e`` with ``theta ~ N(theta0, Gamma)``, ``e ~ N(0, Sigma)``.

    The support box is the joint mean plus or minus ``box_sd`` joint standard
    deviations in each coordinate. The reference density is the product of
    the likelihood marginals at ``theta0`` and the prior marginals.
    """

    name = "lingauss"

    def __init__(self, G, theta0=None, prior_cov=None, noise_cov=None, offset=None, box_sd=5.0):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        d_y, d_theta = G.shape
        self.G = G
        self.theta0 = np.zeros(d_theta) if theta0 is None else np.asarray(theta0, dtype=float)
        self.prior_cov = np.eye(d_theta) if prior_cov is None else np.asarray(prior_cov, float)
        self.noise_cov = np.eye(d_y) if noise_cov is None else np.asarray(noise_cov, float)
        self.offset = np.zeros(d_y) if offset is None else np.asarray(offset, dtype=float)
        self.box_sd = float(box_sd)
        mean = self.joint_mean
        sd = np.sqrt(np.diag(self.joint_cov))
        super().__init__(d_y, d_theta, mean - box_sd * sd, mean + box_sd * sd)
        self._prior_prec = np.linalg.inv(self.prior_cov)
        self._noise_prec = np.linalg.inv(self.noise_cov)
        self._ref_mean = np.concatenate([self.G @ self.theta0 + self.offset, self.theta0])
        self._ref_var = np.concatenate([np.diag(self.noise_cov), np.diag(self.prior_cov)])

    @property
    def joint_mean(self):
        return np.concatenate([self.G @ self.theta0 + self.offset, self.theta0])

    @property
    def joint_cov(self):
        g, p = self.G, self.prior_cov
        top = np.hstack([g @ p @ g.T + self.noise_cov, g @ p])
        bottom = np.hstack([p @ g.T, p])
        return np.vstack([top, bottom])

    @property
    def is_whitened(self):
        return (
            np.allclose(self.prior_cov, np.eye(self.d_theta))
            and np.allclose(self.noise_cov, np.eye(self.d_y))
        )

    def posterior_cov(self):
        return np.linalg.inv(self._prior_prec + self.G.T @ self._noise_prec @ self.G)

    def posterior_mean(self, y):
        """Posterior mean for one observation ``(d_y,)`` or a batch ``(m, d_y)``."""
        y = np.asarray(y, dtype=float)
        rhs = self._prior_prec @ self.theta0 + (self.G.T @ self._noise_prec @ (y - self.offset).T).T
        return rhs @ self.posterior_cov().T

    def forward(self, theta):
        return np.atleast_2d(theta) @ self.G.T + self.offset

    def log_joint(self, x):
        y, theta = self.split(x)
        ry = y - self.forward(theta)
        rt = theta - self.theta0
        quad = np.einsum("mi,ij,mj->m", ry, self._noise_prec, ry)
        quad += np.einsum("mi,ij,mj->m", rt, self._prior_prec, rt)
        logdet = np.linalg.slogdet(self.noise_cov)[1] + np.linalg.slogdet(self.prior_cov)[1]
        return -0.5 * quad - 0.5 * logdet - 0.5 * self.d * np.log(2 * np.pi)

    def log_reference(self, x):
        x = np.atleast_2d(x)
        r = (x - self._ref_mean) ** 2 / self._ref_var
        return -0.5 * np.sum(r + np.log(2 * np.pi * self._ref_var), axis=1)

    def grad_log_ratio(self, x):
        y, theta = self.split(x)
        ry = y - self.forward(theta)
        gy = -ry @ self._noise_prec.T
        gt = ry @ (self._noise_prec @ self.G) - (theta - self.theta0) @ self._prior_prec.T
        g = np.hstack([gy, gt])
        return g + (np.atleast_2d(x) - self._ref_mean) / self._ref_var

    def grad_forward(self, theta):
        theta = np.atleast_2d(theta)
        return np.broadcast_to(self.G, (theta.shape[0],) + self.G.shape)

    def exact_h_matrices(self):
        """``(H_Y, H_Theta) = (G G^T, G^T G)`` for the whitened problem."""
        if not self.is_whitened:
            raise ValueError("closed-form H matrices are defined for whitened problems")
        return self.G @ self.G.T, self.G.T @ self.G

    def whitened(self):
        """Equivalent problem with identity prior and noise covariances.

        Returns the problem together with the affine maps ``theta = L_g t``
        and ``y = L_s u``, as the pair of square-root matrices.
        """
        ls = _sqrtm_spd(self.noise_cov)
        lg = _sqrtm_spd(self.prior_cov)
        ls_inv = np.linalg.inv(ls)
        gw = ls_inv @ self.G @ lg
        theta0 = np.linalg.solve(lg, self.theta0)
        offset = ls_inv @ self.offset
        return LinearGaussian(gw, theta0, offset=offset, box_sd=self.box_sd), (ls, lg)

    def reduce(self, a_n, b_n):
        """Exact linear-Gaussian problem for ``(A_n^T y, B_n^T theta)``.

        ``a_n`` and ``b_n`` have orthonormal columns. The discarded parameter
        directions are marginalized into the noise.
        """
        if not self.is_whitened:
            raise ValueError("reduction is defined for whitened problems")
        a_n = np.asarray(a_n, dtype=float)
        b_n = np.asarray(b_n, dtype=float)
        proj_perp = np.eye(self.d_theta) - b_n @ b_n.T
        g_red = a_n.T @ self.G @ b_n
        noise = a_n.T @ (np.eye(self.d_y) + self.G @ proj_perp @ self.G.T) @ a_n
        offset = a_n.T @ (self.G @ proj_perp @ self.theta0 + self.offset)
        return LinearGaussian(g_red, b_n.T @ self.theta0, noise_cov=noise, offset=offset,
                              box_sd=self.box_sd)

    def sample_prior(self, n, rng):
        return rng.multivariate_normal(self.theta0, self.prior_cov, size=n)

    def sample_joint(self, n, rng):
        theta = self.sample_prior(n, rng)
        noise = rng.multivariate_normal(np.zeros(self.d_y), self.noise_cov, size=n)
        return np.hstack([self.forward(theta) + noise, theta])

    def hellinger_posterior(self, y, mean, cov):
        """Closed-form Hellinger distance between the posterior at ``y`` and ``N(mean, cov)``."""
        m1, c1 = self.posterior_mean(y), self.posterior_cov()
        return gaussian_hellinger(m1, c1, np.asarray(mean), np.asarray(cov))


def gaussian_hellinger(m1, c1, m2, c2):
    """Hellinger distance between two multivariate normals, in ``[0, 1]``."""
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    c1, c2 = np.atleast_2d(c1), np.atleast_2d(c2)
    avg = 0.5 * (c1 + c2)
    dm = m1 - m2
    log_bc = (
        0.25 * np.linalg.slogdet(c1)[1]
        + 0.25 * np.linalg.slogdet(c2)[1]
        - 0.5 * np.linalg.slogdet(avg)[1]
        - 0.125 * dm @ scipy.linalg.solve(avg, dm, assume_a="pos")
    )
    return float(np.sqrt(max(0.0, 1.0 - np.exp(log_bc))))


def linear_gaussian_target(G, theta0=None, prior_cov=None, noise_cov=None, box_sd=5.0):
    return LinearGaussian(G, theta0, prior_cov, noise_cov, box_sd=box_sd)


def random_linear_gaussian(d_y, d_theta, scale=1.0, seed=0, box_sd=5.0):
    """Whitened problem with a Gaussian random forward matrix of entry scale ``scale / sqrt(d_theta)``."""
    rng = np.random.default_rng(seed)
    G = scale * rng.standard_normal((d_y, d_theta)) / np.sqrt(d_theta)
    return LinearGaussian(G, box_sd=box_sd)
