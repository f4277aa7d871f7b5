"""Squared inverse Rosenblatt transports built from a tensor train of a square root.

The approximate density is ``p = (g**2 + gamma) / z`` where ``g`` is a
functional tensor train. Its marginals are again sums of squares, obtained by
a backward sweep of Cholesky-weighted QR factorizations, so every conditional
CDF is a piecewise cubic that can be inverted exactly.

Points are passed in natural layout ``(y_1, ..., y_dY, theta_1, ..., theta_dT)``.
The tensor train orders its variables as ``y_dY, ..., y_1, theta_1, ...``, so
conditioning on ``y`` only touches a prefix of the cores.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .basis import Basis1D, PiecewiseQuadraticCdf, _quadratic_coef, mass_matrix
from .errors import BuildError, DomainError, StructureError
from .tensor_train import CrossConfig, FunctionalTensorTrain, tt_cross

__all__ = [
    "ReferenceMeasure",
    "SirtTransport",
    "Transport",
    "ConditionalMap",
    "tt_permutation",
    "marginalize",
    "eval_joint_pdf",
    "marginal_pdf",
    "rosenblatt_forward",
    "rosenblatt_inverse",
    "make_transport",
    "conditional_map",
    "pullback_logpdf",
    "build_sirt",
]

_LOG_FLOOR_CAP = 600.0


def tt_permutation(d_y, d_theta):
    """Column permutation between natural layout and tensor-train order.

    The permutation reverses the observation block and is its own inverse.
    """
    return np.concatenate([np.arange(d_y)[::-1], np.arange(d_y, d_y + d_theta)])


@dataclass(frozen=True)
class ReferenceMeasure:
    """Product reference density, uniform on [0, 1] or a truncated standard normal.

    Attributes
    ----------
    kind : {"uniform01", "truncated_gaussian"}
    bound : float
        Truncation point ``a`` of the normal on ``[-a, a]``.
    """

    kind: str = "truncated_gaussian"
    bound: float = 3.0

    def __post_init__(self):
        if self.kind not in ("uniform01", "truncated_gaussian"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "truncated_gaussian" and not self.bound > 0:
            raise ValueError("truncation bound must be positive")

    @property
    def lower(self):
        return 0.0 if self.kind == "uniform01" else -float(self.bound)

    @property
    def upper(self):
        return 1.0 if self.kind == "uniform01" else float(self.bound)

    @property
    def _log_norm(self):
        a = self.bound
        return np.log(ndtr(a) - ndtr(-a))

    def bases(self, d, n):
        """Equispaced hat bases with ``n`` nodes on the reference interval."""
        return [Basis1D.uniform(self.lower, self.upper, n) for _ in range(d)]

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "uniform01":
            return np.clip(z, 0.0, 1.0)
        a = self.bound
        lo = ndtr(-a)
        return np.clip((ndtr(np.clip(z, -a, a)) - lo) / (ndtr(a) - lo), 0.0, 1.0)

    def icdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform01":
            return np.clip(u, 0.0, 1.0)
        a = self.bound
        lo = ndtr(-a)
        # Symmetric evaluation keeps the upper tail as accurate as the lower one.
        mass = ndtr(a) - lo
        upper_half = u > 0.5
        p = np.where(upper_half, (1.0 - u) * mass + lo, u * mass + lo)
        z = ndtri(p)
        z = np.where(upper_half, -z, z)
        return np.clip(z, -a, a)

    def logpdf(self, z):
        """Log density summed over the last axis."""
        z = np.asarray(z, dtype=float)
        if self.kind == "uniform01":
            return np.zeros(z.shape[:-1])
        d = z.shape[-1]
        return -0.5 * np.sum(z**2, axis=-1) - d * (0.5 * np.log(2 * np.pi) + self._log_norm)

    def sample(self, n, d, rng):
        return self.icdf(rng.random((n, d)))


class SirtTransport:
    """Squared tensor-train density with its marginal tensors.

    Attributes
    ----------
    tt : FunctionalTensorTrain
        Approximation ``g`` of the square-root density, in tensor-train order.
    marginal_tensors : list of ndarray
        ``B_k`` such that the unnormalized marginal of the first ``k + 1``
        variables is ``|G_<k B_k(x_k)|**2 + gamma * vol_{>k}``.
    norm_constant : float
        ``z = int g**2 + gamma * volume``.
    gamma : float
        Defensive constant added to ``g**2``.
    reference : ReferenceMeasure
    dims : tuple of int
    """

    def __init__(self, tt, marginal_tensors, tt_mass, gamma, reference=None):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.tt = tt
        self.marginal_tensors = [np.asarray(b) for b in marginal_tensors]
        for b in self.marginal_tensors:
            b.setflags(write=False)
        self.tt_mass = float(tt_mass)
        self.gamma = float(gamma)
        self.reference = reference or ReferenceMeasure()
        self.dims = tt.dims
        self.perm = tt_permutation(*self.dims)
        widths = tt.upper - tt.lower
        # Volume of the box spanned by variables after position k, in TT order.
        tail = np.concatenate([np.cumprod(widths[::-1])[::-1][1:], [1.0]])
        self.volume_after = tail
        self.norm_constant = self.tt_mass + self.gamma * tt.volume
        if not self.norm_constant > 0:
            raise BuildError("normalizing constant is not positive")
        self._cache = _PrefixCache()

    @property
    def d(self):
        return self.tt.ndim

    @property
    def lower(self):
        return self.tt.lower[self.perm]

    @property
    def upper(self):
        return self.tt.upper[self.perm]

    def with_gamma(self, gamma):
        """Same transport with a different defensive constant."""
        return SirtTransport(self.tt, self.marginal_tensors, self.tt_mass, gamma, self.reference)

    def _sweep(self, vals, k0, left, logscale, inverse):
        """Process tensor-train positions ``k0, k0 + 1, ...`` for ``vals.shape[1]`` steps.

        ``left`` holds the normalized row vectors ``G_<k0`` and ``logscale`` their
        log norms. Returns mapped values, log conditional densities and the
        updated prefix state.
        """
        m, steps = vals.shape
        out = np.empty_like(vals)
        logpdf = np.zeros(m)
        for j in range(steps):
            k = k0 + j
            basis = self.tt.bases[k]
            coef = np.einsum("ma,aib->mib", left, self.marginal_tensors[k])
            expo = np.minimum(-2.0 * logscale, _LOG_FLOOR_CAP)
            floor = self.gamma * self.volume_after[k] * np.exp(expo)
            qc = _quadratic_coef(coef, floor)
            cdf = PiecewiseQuadraticCdf(basis.nodes, qc)
            dead = ~(cdf.mass > 0)
            if np.any(dead):
                qc[dead] = 0.0
                qc[dead, :, 0] = 1.0
                cdf = PiecewiseQuadraticCdf(basis.nodes, qc)
            if inverse:
                x = cdf.invert(vals[:, j])
                out[:, j] = x
            else:
                x = vals[:, j]
                out[:, j] = np.clip(cdf.cdf(x) / cdf.mass, 0.0, 1.0)
            with np.errstate(divide="ignore"):
                logpdf += np.log(cdf.pdf(x)) - np.log(cdf.mass)
            logpdf[dead] = -np.inf
            left = np.einsum("ma,mab->mb", left, self.tt.core_at(k, x))
            nrm = np.linalg.norm(left, axis=1)
            nrm[nrm == 0] = 1.0
            left = left / nrm[:, None]
            logscale = logscale + np.log(nrm)
        return out, logpdf, left, logscale

    def _start(self, m):
        return np.ones((m, 1)), np.zeros(m)

    def forward_tt(self, x_tt):
        """Rosenblatt map in tensor-train order, with log density of each point."""
        left, scale = self._start(x_tt.shape[0])
        u, logpdf, _, _ = self._sweep(x_tt, 0, left, scale, inverse=False)
        return u, logpdf

    def inverse_tt(self, u_tt):
        left, scale = self._start(u_tt.shape[0])
        x, logpdf, _, _ = self._sweep(u_tt, 0, left, scale, inverse=True)
        return x, logpdf

    def prefix(self, y):
        """Prefix state after conditioning on observations ``y`` (natural order).

        Returns ``(u_y, log p_Y(y), left, logscale)``, each for a single point,
        cached by the bytes of ``y``.
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        d_y = self.dims[0]
        if y.size != d_y:
            raise StructureError(f"expected {d_y} observations, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise DomainError("observations must be finite")
        key = y.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        left, scale = self._start(1)
        u, logm, left, scale = self._sweep(y[::-1][None, :], 0, left, scale, inverse=False)
        value = (u[0, ::-1].copy(), float(logm[0]), left, scale)
        self._cache.put(key, value)
        return value

    def conditional_tt(self, y, vals, inverse):
        _, logm, left, scale = self.prefix(y)
        m = vals.shape[0]
        left = np.repeat(left, m, axis=0)
        scale = np.repeat(scale, m)
        return self._sweep(vals, self.dims[0], left, scale, inverse=inverse)[:2]


class _PrefixCache:
    """Small thread-safe LRU map from observation bytes to prefix states."""

    def __init__(self, size=256):
        self.size = size
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            value = self._data.get(key)
            if value is not None:
                self._data.move_to_end(key)
            return value

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.size:
                self._data.popitem(last=False)


def marginalize(tt, gamma=0.0, reference=None):
    """Marginal tensors and normalizing constant of ``g**2 + gamma``.

    Backward recursion: ``B_d = A_d``; for each ``k`` the mass-weighted
    unfolding ``C_k = B_k x_2 L_k^T`` is factorized by thin QR and its
    triangular factor is absorbed into the previous core.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    for k, core in enumerate(tt.cores):
        if not np.all(np.isfinite(core)):
            raise BuildError(f"core {k} has non-finite entries")
    d = tt.ndim
    b = [None] * d
    b[d - 1] = np.array(tt.cores[d - 1])
    tt_mass = None
    for k in range(d - 1, -1, -1):
        chol = mass_matrix(tt.bases[k]).cholesky_factor
        c = np.einsum("aib,il->alb", b[k], chol)
        r0 = c.shape[0]
        unfold = c.reshape(r0, -1).T
        r = np.linalg.qr(unfold, mode="r")
        if k == 0:
            tt_mass = float(r[0, 0] ** 2)
        else:
            b[k - 1] = np.einsum("aib,lb->ail", tt.cores[k - 1], r)
    return SirtTransport(tt, b, tt_mass, gamma, reference)


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise StructureError(f"expected points of dimension {d}, got {x.shape[1]}")
    return x, single


def eval_joint_pdf(sirt, x, log=False):
    """Normalized density ``(g**2 + gamma) / z`` at points in natural layout."""
    x, single = _as_points(x, sirt.d)
    g = sirt.tt(x[:, sirt.perm])
    val = (g**2 + sirt.gamma) / sirt.norm_constant
    if log:
        with np.errstate(divide="ignore"):
            val = np.log(val)
    return float(val[0]) if single else val


def marginal_pdf(sirt, x_prefix):
    """Normalized marginal density of the first ``k`` tensor-train variables.

    ``x_prefix`` has shape ``(m, k)`` and is given in tensor-train order.
    """
    x = np.atleast_2d(np.asarray(x_prefix, dtype=float))
    k = x.shape[1]
    if not 1 <= k <= sirt.d:
        raise StructureError("prefix length must be between 1 and d")
    left = np.ones((x.shape[0], 1))
    for j in range(k - 1):
        left = np.einsum("ma,mab->mb", left, sirt.tt.core_at(j, x[:, j]))
    bk = sirt.tt.bases[k - 1].interpolate(np.moveaxis(sirt.marginal_tensors[k - 1], 1, 0), x[:, k - 1])
    v = np.einsum("ma,mab->mb", left, bk)
    return (np.sum(v**2, axis=1) + sirt.gamma * sirt.volume_after[k - 1]) / sirt.norm_constant


def rosenblatt_forward(sirt, x):
    """Map points of the approximate density to the unit cube (natural layout)."""
    x, single = _as_points(x, sirt.d)
    u, _ = sirt.forward_tt(x[:, sirt.perm])
    u = u[:, sirt.perm]
    return u[0] if single else u


def rosenblatt_inverse(sirt, u):
    """Inverse Rosenblatt map from the unit cube (natural layout)."""
    u, single = _as_points(u, sirt.d)
    if not np.all(np.isfinite(u)) or np.any((u < 0) | (u > 1)):
        raise DomainError("Rosenblatt inverse needs u in [0, 1]^d")
    x, _ = sirt.inverse_tt(u[:, sirt.perm])
    x = x[:, sirt.perm]
    return x[0] if single else x


class ConditionalMap:
    """Map from reference coordinates of ``theta`` to samples of ``p(theta | y)``.

    Obtained from :meth:`Transport.condition`. The observation prefix is
    contracted once at construction.
    """

    def __init__(self, transport, y):
        self.transport = transport
        self.sirt = transport.sirt
        self.y = np.asarray(y, dtype=float).reshape(-1)
        u_y, self.log_marginal, _, _ = self.sirt.prefix(self.y)
        self.u_y = u_y
        self.z_y = transport.reference.icdf(u_y)

    @property
    def d_theta(self):
        return self.sirt.dims[1]

    def map(self, z_theta):
        """Conditional samples and their log conditional densities."""
        z_theta = np.atleast_2d(np.asarray(z_theta, dtype=float))
        u = self.transport.reference.cdf(z_theta)
        return self.sirt.conditional_tt(self.y, u, inverse=True)

    def inverse(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        u, logpdf = self.sirt.conditional_tt(self.y, theta, inverse=False)
        return self.transport.reference.icdf(u), logpdf

    def logpdf(self, theta):
        return self.inverse(theta)[1]


class Transport:
    """Lower-triangular map ``T = F^{-1} o R`` pushing the reference to ``p``."""

    def __init__(self, sirt):
        self.sirt = sirt
        self.reference = sirt.reference
        self.perm = sirt.perm

    @property
    def d(self):
        return self.sirt.d

    @property
    def dims(self):
        return self.sirt.dims

    def forward(self, z, return_logpdf=False):
        """``T(z)`` for reference points ``z``; optionally with ``log p(T(z))``."""
        z, single = _as_points(z, self.d)
        u = self.reference.cdf(z)
        x, logp = self.sirt.inverse_tt(u[:, self.perm])
        x = x[:, self.perm]
        if single:
            x, logp = x[0], logp[0]
        return (x, logp) if return_logpdf else x

    def inverse(self, x, return_logpdf=False):
        """``T^{-1}(x)``; optionally with ``log p(x)``."""
        x, single = _as_points(x, self.d)
        u, logp = self.sirt.forward_tt(x[:, self.perm])
        z = self.reference.icdf(u[:, self.perm])
        if single:
            z, logp = z[0], logp[0]
        return (z, logp) if return_logpdf else z

    def logpdf(self, x):
        return self.inverse(x, return_logpdf=True)[1]

    def log_det_jacobian(self, z):
        """``log |det dT/dz| = log rho(z) - log p(T(z))``."""
        _, logp = self.forward(z, return_logpdf=True)
        return self.reference.logpdf(np.asarray(z, dtype=float)) - logp

    def condition(self, y):
        return ConditionalMap(self, y)


def make_transport(sirt):
    return Transport(sirt)


def conditional_map(sirt, y, u_theta):
    """Samples of ``p(theta | y)`` from uniform coordinates ``u_theta``.

    The prefix contraction for ``y`` is cached on the transport, so repeated
    calls with the same observations only pay for the ``theta`` block.
    """
    u = np.atleast_2d(np.asarray(u_theta, dtype=float))
    if u.shape[1] != sirt.dims[1]:
        raise StructureError(f"expected {sirt.dims[1]} coordinates, got {u.shape[1]}")
    if not np.all(np.isfinite(u)) or np.any((u < 0) | (u > 1)):
        raise DomainError("conditional map needs u in [0, 1]")
    return sirt.conditional_tt(y, u, inverse=True)[0]


def pullback_logpdf(transport, log_target, z):
    """Log of ``pi(T(z)) rho(z) / p(T(z))`` for an unnormalized ``log_target``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, logp = transport.forward(z, return_logpdf=True)
    return log_target(x) + transport.reference.logpdf(z) - logp


def build_sirt(sqrt_density, bases, dims=None, config=None, gamma=0.0, reference=None,
               init=None, rng=None):
    """Cross-approximate ``sqrt_density`` and marginalize the result.

    Parameters
    ----------
    sqrt_density : callable
        Square root of the (unnormalized) target, on ``(m, d)`` points in
        natural layout.
    bases : list of Basis1D
        Bases in natural layout.
    dims : tuple of int, optional
        ``(d_y, d_theta)``; defaults to ``(0, d)``.

    Returns
    -------
    sirt : SirtTransport
    info : dict
        ``eval_count``, ``achieved_error`` and per-sweep errors of the cross.
    """
    d = len(bases)
    dims = dims if dims is not None else (0, d)
    perm = tt_permutation(*dims)
    tt_bases = [bases[i] for i in perm]

    def f_tt(x_tt):
        return sqrt_density(x_tt[:, perm])

    tt, count, err, info = tt_cross(
        f_tt, tt_bases, config or CrossConfig(), init=init, dims=dims, rng=rng, return_info=True
    )
    sirt = marginalize(tt, gamma, reference)
    info = dict(info, eval_count=count, achieved_error=err)
    return sirt, info
