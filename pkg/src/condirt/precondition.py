"""Gradient-informed variable ordering, rotation and truncation.

The H matrices are second moments of the gradient of ``log(pi / rho)``
split into the observation block and the parameter block. Sorting their
diagonals puts strongly coupled variables first; their eigenvectors give
the rotation whose discarded eigenvalues bound the Hellinger error of
truncation (up to a Poincare constant for general targets).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedOperationError
from .models.base import TargetDensity

__all__ = [
    "HMatrices",
    "Preconditioner",
    "PreconditionedTarget",
    "estimate_h_general",
    "estimate_h_gaussian",
    "build_preconditioner",
    "finite_difference_gradient",
    "tail_bound",
]


@dataclass(frozen=True, eq=False)
class HMatrices:
    """Pair of gradient second-moment matrices with Monte Carlo standard errors."""

    h_y: np.ndarray
    h_theta: np.ndarray
    sample_count: int
    mode: str
    se_y: np.ndarray = None
    se_theta: np.ndarray = None

    def __post_init__(self):
        if self.mode not in ("monte_carlo_general", "gaussian_closed_form"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("h_y", "h_theta"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            m = 0.5 * (m + m.T)
            object.__setattr__(self, name, m)

    def eig(self, which):
        """Eigenvalues in decreasing order and matching eigenvectors."""
        m = self.h_y if which == "y" else self.h_theta
        if m.size == 0:
            return np.zeros(0), np.zeros((0, 0))
        w, v = np.linalg.eigh(m)
        idx = np.argsort(-w, kind="stable")
        return w[idx], v[:, idx]

    def scaled(self, c):
        return HMatrices(c * self.h_y, c * self.h_theta, self.sample_count, self.mode)


def finite_difference_gradient(f, x, rel_step=1e-5, scale=None):
    """Central differences of a batched scalar function, shape ``(m, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = x.shape
    scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
    h = rel_step * scale
    pts = np.repeat(x[None, :, :], 2 * d, axis=0)
    for j in range(d):
        pts[2 * j, :, j] += h[j]
        pts[2 * j + 1, :, j] -= h[j]
    vals = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(2 * d, m)
    return ((vals[0::2] - vals[1::2]) / (2 * h[:, None])).T


def _moments(g):
    outer = np.einsum("mi,mj->mij", g, g)
    n = g.shape[0]
    mean = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def estimate_h_general(target, n_samples, rng=None, samples=None, gradient="auto", rel_step=1e-5):
    """Monte Carlo H matrices of a target from samples of the joint density.

    Parameters
    ----------
    target : TargetDensity
    n_samples : int
    samples : ndarray, optional
        Draws from the target; by default ``target.sample_joint`` is used.
    gradient : {"auto", "analytic", "fd"}
        ``"analytic"`` requires ``target.grad_log_ratio``; ``"fd"`` uses
        central differences of ``target.log_ratio`` with step
        ``rel_step`` times the box width; ``"auto"`` picks the former when
        available.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if samples is None:
        samples = target.sample_joint(n_samples, rng)
    samples = np.atleast_2d(samples)[:n_samples]
    if gradient == "analytic" and not target.has_gradient:
        raise UnsupportedOperationError(
            f"{target.name} exposes no gradient; use gradient='fd' or estimate_h_gaussian"
        )
    if gradient == "fd" or (gradient == "auto" and not target.has_gradient):
        g = finite_difference_gradient(target.log_ratio, samples, rel_step,
                                       target.upper - target.lower)
    else:
        g = target.grad_log_ratio(samples)
    d_y = target.d_y
    hy, sey = _moments(g[:, :d_y])
    ht, set_ = _moments(g[:, d_y:])
    return HMatrices(hy, ht, samples.shape[0], "monte_carlo_general", sey, set_)


def estimate_h_gaussian(forward, prior_sampler, theta0, n_samples, rng=None, jacobian=None,
                        rel_step=1e-5):
    """H matrices of a whitened Gaussian problem from prior samples only.

    ``H_Y`` is the second moment of ``G(theta) - G(theta0)`` and ``H_Theta``
    the mean of ``J(theta)^T J(theta)``, both over the prior.

    Parameters
    ----------
    forward : callable
        ``(m, d_theta) -> (m, d_y)``.
    prior_sampler : callable
        ``(n, rng) -> (n, d_theta)``.
    jacobian : callable, optional
        ``(m, d_theta) -> (m, d_y, d_theta)``; finite differences otherwise.
    """
    rng = rng if rng is not None else np.random.default_rng()
    theta = np.atleast_2d(prior_sampler(n_samples, rng))
    theta0 = np.asarray(theta0, dtype=float).reshape(1, -1)
    out = forward(theta)
    dev = out - forward(theta0)
    if jacobian is not None:
        jac = np.asarray(jacobian(theta), dtype=float)
    else:
        d_t = theta.shape[1]
        cols = []
        for j in range(d_t):
            e = np.zeros(d_t)
            e[j] = rel_step
            cols.append((forward(theta + e) - forward(theta - e)) / (2 * rel_step))
        jac = np.stack(cols, axis=-1)
    hy, sey = _moments(dev)
    jtj = np.einsum("mij,mik->mjk", jac, jac)
    ht = jtj.mean(axis=0)
    set_ = jtj.std(axis=0, ddof=1) / np.sqrt(theta.shape[0])
    return HMatrices(hy, ht, theta.shape[0], "gaussian_closed_form", sey, set_)


def tail_bound(values_y, values_theta, n_y, n_theta):
    """Quarter of the discarded diagonal or eigenvalue mass."""
    return 0.25 * (float(np.sum(values_y[n_y:])) + float(np.sum(values_theta[n_theta:])))


def _choose_n(values, threshold):
    total = float(np.sum(values))
    if values.size == 0:
        return 0
    if total <= 0:
        return 1
    tails = np.concatenate([np.cumsum(values[::-1])[::-1], [0.0]])
    for n in range(1, values.size + 1):
        if tails[n] <= threshold * total:
            return n
    return values.size


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """Affine change of variables applied before building a transport.

    A block is first whitened, ``w = scale @ (v - shift)``, then rotated by
    the orthogonal matrix whose columns are ``rotate[:, order]``, and only
    the first ``n`` rotated coordinates are kept.
    """

    order_y: np.ndarray
    order_theta: np.ndarray
    rotate_y: np.ndarray
    rotate_theta: np.ndarray
    n_y: int
    n_theta: int
    spectrum_y: np.ndarray
    spectrum_theta: np.ndarray
    strategy: str = "reorder"
    y_shift: np.ndarray = None
    y_scale: np.ndarray = None
    theta_shift: np.ndarray = None
    theta_scale: np.ndarray = None
    bound: float = field(init=False)

    def __post_init__(self):
        d_y, d_t = len(self.order_y), len(self.order_theta)
        for name, d in (("y", d_y), ("theta", d_t)):
            if getattr(self, f"{name}_shift") is None:
                object.__setattr__(self, f"{name}_shift", np.zeros(d))
            if getattr(self, f"{name}_scale") is None:
                object.__setattr__(self, f"{name}_scale", np.eye(d))
        if d_y and not 1 <= self.n_y <= d_y:
            raise ValueError("n_y must lie in [1, d_y]")
        if d_t and not 1 <= self.n_theta <= d_t:
            raise ValueError("n_theta must lie in [1, d_theta]")
        for m in (self.rotate_y, self.rotate_theta):
            if m.size and np.linalg.norm(m.T @ m - np.eye(m.shape[0])) > 1e-10:
                raise ValueError("rotation matrices must be orthogonal")
        object.__setattr__(
            self, "bound", tail_bound(self.spectrum_y, self.spectrum_theta, self.n_y, self.n_theta)
        )

    @property
    def basis_y(self):
        return self.rotate_y[:, self.order_y]

    @property
    def basis_theta(self):
        return self.rotate_theta[:, self.order_theta]

    @property
    def d_y(self):
        return len(self.order_y)

    @property
    def d_theta(self):
        return len(self.order_theta)

    def bound_at(self, n_y, n_theta):
        return tail_bound(self.spectrum_y, self.spectrum_theta, n_y, n_theta)

    def _apply(self, v, shift, scale, basis, n):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return ((v - shift) @ scale.T @ basis)[:, :n]

    def _unapply(self, r, shift, scale, basis, fill=None):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        n = r.shape[1]
        full = np.zeros((r.shape[0], basis.shape[0]))
        full[:, :n] = r
        if fill is not None:
            full[:, n:] = fill
        w = full @ basis.T
        return np.linalg.solve(scale, w.T).T + shift

    def apply_y(self, y):
        return self._apply(y, self.y_shift, self.y_scale, self.basis_y, self.n_y)

    def unapply_y(self, r, fill=None):
        return self._unapply(r, self.y_shift, self.y_scale, self.basis_y, fill)

    def apply_theta(self, theta):
        return self._apply(theta, self.theta_shift, self.theta_scale, self.basis_theta, self.n_theta)

    def unapply_theta(self, r, fill=None):
        return self._unapply(r, self.theta_shift, self.theta_scale, self.basis_theta, fill)

    def apply(self, x):
        x = np.atleast_2d(x)
        return np.hstack([self.apply_y(x[:, : self.d_y]), self.apply_theta(x[:, self.d_y :])])

    def unapply(self, x):
        x = np.atleast_2d(x)
        return np.hstack([self.unapply_y(x[:, : self.n_y]), self.unapply_theta(x[:, self.n_y :])])

    @property
    def log_jacobian_theta(self):
        """``log |det|`` of the map from retained parameter coordinates back to ``theta``.

        Only meaningful when no parameter is discarded.
        """
        return -float(np.linalg.slogdet(self.theta_scale)[1])


def build_preconditioner(h, strategy="reorder", energy_threshold=None, n_y=None, n_theta=None,
                         whitening=None):
    """Orderings or rotations from H matrices, with truncation ranks.

    Parameters
    ----------
    h : HMatrices
    strategy : {"reorder", "rotate"}
    energy_threshold : float, optional
        Keep the smallest ``n`` whose discarded diagonal (or eigenvalue) sum is
        at most this fraction of the trace. Ignored for blocks whose ``n`` is
        given explicitly; without either, nothing is discarded.
    whitening : dict, optional
        ``y_shift``, ``y_scale``, ``theta_shift``, ``theta_scale`` of the affine
        whitening applied before rotation.
    """
    d_y, d_t = h.h_y.shape[0], h.h_theta.shape[0]
    if strategy == "reorder":
        dy, dt = np.diag(h.h_y), np.diag(h.h_theta)
        order_y = np.argsort(-dy, kind="stable")
        order_t = np.argsort(-dt, kind="stable")
        spec_y, spec_t = dy[order_y], dt[order_t]
        rot_y, rot_t = np.eye(d_y), np.eye(d_t)
    elif strategy == "rotate":
        spec_y, rot_y = h.eig("y")
        spec_t, rot_t = h.eig("theta")
        order_y, order_t = np.arange(d_y), np.arange(d_t)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    def pick(n, spec, d):
        if n is not None:
            return int(n)
        if energy_threshold is not None:
            return _choose_n(np.clip(spec, 0, None), energy_threshold)
        return d

    whitening = whitening or {}
    return Preconditioner(
        order_y=order_y,
        order_theta=order_t,
        rotate_y=rot_y,
        rotate_theta=rot_t,
        n_y=pick(n_y, spec_y, d_y),
        n_theta=pick(n_theta, spec_t, d_t),
        spectrum_y=spec_y,
        spectrum_theta=spec_t,
        strategy=strategy,
        **{k: np.asarray(v, dtype=float) for k, v in whitening.items()},
    )


class PreconditionedTarget(TargetDensity):
    """A target expressed in the retained coordinates of a preconditioner.

    Discarded coordinates are fixed at zero in whitened-rotated space, that
    is at the whitening shift. The box is the bounding box of the original
    box's image.
    """

    def __init__(self, target, precond):
        self.target = target
        self.precond = precond
        self.name = f"{target.name}-preconditioned"
        half = 0.5 * (target.upper - target.lower)
        center = 0.5 * (target.upper + target.lower)
        lo, hi = [], []
        for block, sl, shift, scale, basis, n in (
            ("y", slice(0, target.d_y), precond.y_shift, precond.y_scale, precond.basis_y, precond.n_y),
            ("t", slice(target.d_y, target.d), precond.theta_shift, precond.theta_scale,
             precond.basis_theta, precond.n_theta),
        ):
            m = (scale.T @ basis)[:, :n]
            c = (center[sl] - shift) @ m
            w = np.abs(m).T @ half[sl]
            lo.append(c - w)
            hi.append(c + w)
        super().__init__(precond.n_y, precond.n_theta, np.concatenate(lo), np.concatenate(hi))

    def to_original(self, x):
        return self.precond.unapply(x)

    @property
    def _log_jac(self):
        # log |det| of the map from retained coordinates back to the original ones
        p = self.precond
        return -float(np.linalg.slogdet(p.y_scale)[1] + np.linalg.slogdet(p.theta_scale)[1])

    def log_joint(self, x):
        return self.target.log_joint(self.to_original(x)) + self._log_jac

    def log_reference(self, x):
        return self.target.log_reference(self.to_original(x)) + self._log_jac

    def log_base(self, x):
        return self.target.log_base(self.to_original(x)) + self._log_jac

    def sample_joint(self, n, rng):
        return self.precond.apply(self.target.sample_joint(n, rng))
