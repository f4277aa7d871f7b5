"""Piecewise-linear bases on bounded intervals.

The squared expansion of a hat-function series is piecewise quadratic, so
its integral over each cell is a cubic with a closed-form antiderivative.
This module provides the basis, its exact mass matrix and a batched,
monotone CDF object for squared expansions together with its inverse.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateMassError, DomainError

__all__ = [
    "Interval1D",
    "Basis1D",
    "MassMatrix",
    "PiecewiseQuadraticCdf",
    "eval_basis",
    "mass_matrix",
    "squared_expansion_cdf",
    "invert_cdf",
    "clamp_count",
]

# Relative distance outside an interval that is treated as rounding noise.
_CLAMP_SLACK = 1e-10

_clamp_state = {"count": 0, "warned": False}


def clamp_count():
    """Number of points clamped to a basis interval so far in this process."""
    return _clamp_state["count"]


def _clamp(x, lo, hi):
    width = hi - lo
    outside = (x < lo - _CLAMP_SLACK * width) | (x > hi + _CLAMP_SLACK * width)
    n_out = int(np.count_nonzero(outside))
    if n_out:
        _clamp_state["count"] += n_out
        if not _clamp_state["warned"]:
            _clamp_state["warned"] = True
            warnings.warn(
                f"{n_out} point(s) outside [{lo}, {hi}] clamped to the boundary",
                RuntimeWarning,
                stacklevel=3,
            )
    return np.clip(x, lo, hi)


@dataclass(frozen=True)
class Interval1D:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DomainError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DomainError(f"interval requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def length(self):
        return self.hi - self.lo


@dataclass(frozen=True, eq=False)
class Basis1D:
    """Piecewise-linear hat functions on a strictly increasing node vector.

    The ``i``-th hat equals one at ``nodes[i]`` and zero at every other
    node, so coefficients of an expansion are its nodal values.
    """

    nodes: np.ndarray
    kind: str = "piecewise_linear"
    interval: Interval1D = field(init=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a basis needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("basis nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("basis nodes must be strictly increasing")
        if self.kind != "piecewise_linear":
            raise ValueError(f"unsupported basis kind {self.kind!r}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "interval", Interval1D(float(nodes[0]), float(nodes[-1])))

    @classmethod
    def uniform(cls, lo, hi, n):
        """Hat basis on ``n`` equispaced nodes spanning ``[lo, hi]``."""
        return cls(np.linspace(lo, hi, n))

    @property
    def size(self):
        return self.nodes.size

    @property
    def widths(self):
        return np.diff(self.nodes)

    def locate(self, x):
        """Cell index and local coordinate ``t`` in [0, 1] for each point.

        Points are clamped to the interval; non-finite input raises
        :class:`DomainError`.
        """
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("basis evaluation at a non-finite point")
        x = _clamp(x, self.interval.lo, self.interval.hi)
        cell = np.searchsorted(self.nodes, x, side="right") - 1
        cell = np.clip(cell, 0, self.size - 2)
        t = (x - self.nodes[cell]) / (self.nodes[cell + 1] - self.nodes[cell])
        return cell, np.clip(t, 0.0, 1.0)

    def interpolate(self, values, x):
        """Evaluate the expansion with nodal ``values`` (shape ``(n, ...)``) at ``x``."""
        values = np.asarray(values)
        cell, t = self.locate(x)
        t = t.reshape(t.shape + (1,) * (values.ndim - 1))
        return (1.0 - t) * values[cell] + t * values[cell + 1]

    def __eq__(self, other):
        return (
            isinstance(other, Basis1D)
            and self.kind == other.kind
            and np.array_equal(self.nodes, other.nodes)
        )

    def __hash__(self):
        return hash((self.kind, self.nodes.tobytes()))


def eval_basis(basis, x):
    """Values of all basis functions at ``x``.

    Returns shape ``(n,)`` for scalar ``x`` and ``(m, n)`` for a vector of
    ``m`` points. Each row has at most two nonzeros and sums to one.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    cell, t = basis.locate(xs)
    out = np.zeros((xs.size, basis.size))
    rows = np.arange(xs.size)
    out[rows, cell] = 1.0 - t
    out[rows, cell + 1] += t
    return out[0] if scalar else out


@dataclass(frozen=True, eq=False)
class MassMatrix:
    entries: np.ndarray
    cholesky_factor: np.ndarray


def mass_matrix(basis):
    """Exact Gram matrix of the hat functions with its Cholesky factor.

    Each cell of width ``h`` contributes ``[[h/3, h/6], [h/6, h/3]]``.
    """
    h = basis.widths
    n = basis.size
    diag = np.zeros(n)
    diag[:-1] += h / 3.0
    diag[1:] += h / 3.0
    m = np.diag(diag)
    off = h / 6.0
    m[np.arange(n - 1), np.arange(1, n)] = off
    m[np.arange(1, n), np.arange(n - 1)] = off
    chol = scipy.linalg.cholesky(m, lower=True)
    return MassMatrix(entries=m, cholesky_factor=chol)


class PiecewiseQuadraticCdf:
    """Batch of CDFs of nonnegative piecewise-quadratic densities on a shared grid.

    Row ``b`` holds the density ``c0 + c1 t + c2 t**2`` on each cell, in the
    local coordinate ``t`` of that cell. Densities are unnormalized;
    :attr:`mass` gives their integrals.

    Parameters
    ----------
    nodes : ndarray, shape (n,)
    coef : ndarray, shape (m, n - 1, 3)
    """

    max_iter = 100
    tol = 1e-13

    def __init__(self, nodes, coef):
        self.nodes = np.asarray(nodes, dtype=float)
        self.coef = np.asarray(coef, dtype=float)
        self.h = np.diff(self.nodes)
        c0, c1, c2 = self.coef[..., 0], self.coef[..., 1], self.coef[..., 2]
        cell_mass = self.h * (c0 + c1 / 2.0 + c2 / 3.0)
        self.cum = np.concatenate(
            [np.zeros((self.coef.shape[0], 1)), np.cumsum(cell_mass, axis=1)], axis=1
        )
        self.mass = self.cum[:, -1]

    def __len__(self):
        return self.coef.shape[0]

    def _locate(self, x):
        x = _clamp(np.asarray(x, dtype=float), self.nodes[0], self.nodes[-1])
        cell = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 2)
        t = np.clip((x - self.nodes[cell]) / self.h[cell], 0.0, 1.0)
        return cell, t

    def _cell_coef(self, cell):
        rows = np.arange(self.coef.shape[0])
        return self.coef[rows, cell].T

    def pdf(self, x):
        """Unnormalized density of row ``b`` at ``x[b]``."""
        cell, t = self._locate(x)
        c0, c1, c2 = self._cell_coef(cell)
        return c0 + t * (c1 + t * c2)

    def cdf(self, x):
        """Unnormalized cumulative mass of row ``b`` up to ``x[b]``."""
        cell, t = self._locate(x)
        c0, c1, c2 = self._cell_coef(cell)
        rows = np.arange(self.coef.shape[0])
        return self.cum[rows, cell] + self.h[cell] * t * (c0 + t * (c1 / 2.0 + t * c2 / 3.0))

    def invert(self, u):
        """Point ``x[b]`` with ``cdf(x)[b] / mass[b] == u[b]``.

        Cells are located by search over cumulative masses; inside a cell the
        cubic is solved by Newton iteration safeguarded by bisection.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != self.mass.shape:
            u = np.broadcast_to(u, self.mass.shape)
        if not np.all(np.isfinite(u)) or np.any((u < 0.0) | (u > 1.0)):
            raise DomainError("CDF inversion needs u in [0, 1]")
        if np.any(self.mass <= 0.0):
            raise DegenerateMassError("cannot invert a CDF with zero total mass")
        rows = np.arange(u.size)
        target = u * self.mass
        cell = np.count_nonzero(self.cum[:, 1:-1] < target[:, None], axis=1)
        c0, c1, c2 = self._cell_coef(cell)
        h = self.h[cell]
        resid = (target - self.cum[rows, cell]) / h
        cell_mass = (self.cum[rows, cell + 1] - self.cum[rows, cell]) / h
        resid = np.clip(resid, 0.0, cell_mass)
        lo = np.zeros_like(u)
        hi = np.ones_like(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(cell_mass > 0, resid / cell_mass, 0.0)
        scale = self.tol * self.mass / h
        active = np.ones(u.size, dtype=bool)
        for _ in range(self.max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            ti = t[idx]
            a0, a1, a2 = c0[idx], c1[idx], c2[idx]
            f = ti * (a0 + ti * (a1 / 2.0 + ti * a2 / 3.0)) - resid[idx]
            df = a0 + ti * (a1 + ti * a2)
            done = (np.abs(f) <= scale[idx]) | (hi[idx] - lo[idx] <= 1e-15)
            pos = f > 0
            hi[idx] = np.where(pos, ti, hi[idx])
            lo[idx] = np.where(pos, lo[idx], ti)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = ti - f / df
            bad = ~np.isfinite(step) | (step <= lo[idx]) | (step >= hi[idx])
            step = np.where(bad, 0.5 * (lo[idx] + hi[idx]), step)
            t[idx] = np.where(done, ti, step)
            active[idx[done]] = False
        x = self.nodes[cell] + h * t
        x = np.where(u <= 0.0, self.nodes[0], x)
        x = np.where(u >= 1.0, self.nodes[-1], x)
        return x


def _quadratic_coef(values, floor=0.0):
    """Per-cell coefficients of ``sum_l (sum_i c_il phi_i)^2 + floor``.

    ``values`` has shape ``(m, n, r)`` of nodal coefficients; ``floor`` is a
    scalar or ``(m,)`` additive constant.
    """
    a = values[:, :-1, :]
    d = values[:, 1:, :] - a
    coef = np.empty(values.shape[:1] + (values.shape[1] - 1, 3))
    coef[..., 0] = np.einsum("mjr,mjr->mj", a, a)
    coef[..., 1] = 2.0 * np.einsum("mjr,mjr->mj", a, d)
    coef[..., 2] = np.einsum("mjr,mjr->mj", d, d)
    coef[..., 0] += np.reshape(floor, (-1, 1)) if np.ndim(floor) else floor
    return coef


def squared_expansion_cdf(basis, coeff_matrix, floor=0.0):
    """CDF of ``x -> sum_l (sum_i C[i, l] phi_i(x))**2 + floor``.

    ``coeff_matrix`` is ``(n, r)`` for a single density or ``(m, n, r)`` for a
    batch. Total mass is exact (closed-form per cell).
    """
    c = np.asarray(coeff_matrix, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim == 2:
        c = c[None]
    if c.shape[1] != basis.size:
        raise ValueError(f"expected {basis.size} coefficient rows, got {c.shape[1]}")
    if not np.all(np.isfinite(c)):
        raise DomainError("coefficients must be finite")
    cdf = PiecewiseQuadraticCdf(basis.nodes, _quadratic_coef(c, floor))
    if np.any(cdf.mass <= 0.0):
        raise DegenerateMassError("squared expansion has zero mass; use a positive floor")
    return cdf


def invert_cdf(cdf, u):
    """Scalar-friendly wrapper around :meth:`PiecewiseQuadraticCdf.invert`."""
    scalar = np.ndim(u) == 0 and len(cdf) == 1
    x = cdf.invert(np.atleast_1d(np.asarray(u, dtype=float)))
    return float(x[0]) if scalar else x
