"""Functional tensor trains on hat-function grids and their cross approximation.

A :class:`FunctionalTensorTrain` stores one coefficient tensor per variable.
Because hat functions interpolate their nodal values, core ``k`` sliced at
grid index ``i`` is the matrix-valued factor evaluated at ``nodes[i]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BuildError, StructureError

__all__ = [
    "FunctionalTensorTrain",
    "CrossConfig",
    "eval_tt",
    "tt_cross",
    "l2_error_estimate",
    "maxvol",
    "random_tt",
]


class FunctionalTensorTrain:
    """Tensor train whose ``k``-th core has shape ``(r_{k-1}, n_k, r_k)``.

    Parameters
    ----------
    cores : list of ndarray
        Coefficient tensors; outer ranks must be one.
    bases : list of Basis1D
        One basis per variable, ``bases[k].size == cores[k].shape[1]``.
    dims : tuple of int, optional
        Split ``(d_y, d_theta)`` of the variables. Defaults to ``(0, d)``.
    """

    def __init__(self, cores, bases, dims=None):
        cores = [np.array(c, dtype=float) for c in cores]
        bases = list(bases)
        if len(cores) != len(bases) or not cores:
            raise StructureError("need one basis per core and at least one core")
        for k, (c, b) in enumerate(zip(cores, bases)):
            if c.ndim != 3:
                raise StructureError(f"core {k} must be three-dimensional, got shape {c.shape}")
            if c.shape[1] != b.size:
                raise StructureError(
                    f"core {k} has {c.shape[1]} grid entries but its basis has {b.size}"
                )
            if k > 0 and cores[k - 1].shape[2] != c.shape[0]:
                raise StructureError(
                    f"rank mismatch between cores {k - 1} and {k}: "
                    f"{cores[k - 1].shape[2]} != {c.shape[0]}"
                )
            if not np.all(np.isfinite(c)):
                raise StructureError(f"core {k} has non-finite entries")
            c.setflags(write=False)
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise StructureError("outer TT ranks must be one")
        if dims is None:
            dims = (0, len(cores))
        dims = (int(dims[0]), int(dims[1]))
        if sum(dims) != len(cores) or min(dims) < 0:
            raise StructureError(f"dims {dims} do not add up to {len(cores)} variables")
        self.cores = cores
        self.bases = bases
        self.dims = dims

    @property
    def ndim(self):
        return len(self.cores)

    @property
    def ranks(self):
        """Inner ranks ``(r_1, ..., r_{d-1})``."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def grid_sizes(self):
        return tuple(b.size for b in self.bases)

    @property
    def lower(self):
        return np.array([b.interval.lo for b in self.bases])

    @property
    def upper(self):
        return np.array([b.interval.hi for b in self.bases])

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def core_at(self, k, x):
        """Core ``k`` interpolated at points ``x``, shape ``(m, r_{k-1}, r_k)``."""
        return self.bases[k].interpolate(np.moveaxis(self.cores[k], 1, 0), x)

    def __call__(self, x):
        return eval_tt(self, x)

    def full(self):
        """Dense array of nodal values, for small problems and testing."""
        out = self.cores[0][0]
        for c in self.cores[1:]:
            out = np.tensordot(out, c, axes=(-1, 0))
        return out[..., 0]

    def __repr__(self):
        return f"FunctionalTensorTrain(grid={self.grid_sizes}, ranks={self.ranks}, dims={self.dims})"


def eval_tt(tt, x):
    """Evaluate a tensor train at one point or a batch of points.

    Parameters
    ----------
    tt : FunctionalTensorTrain
    x : array_like, shape (d,) or (m, d)

    Returns
    -------
    float or ndarray of shape (m,)
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != tt.ndim:
        raise StructureError(f"expected points of dimension {tt.ndim}, got {x.shape[1]}")
    left = tt.core_at(0, x[:, 0])[:, 0, :]
    for k in range(1, tt.ndim):
        left = np.einsum("ma,mab->mb", left, tt.core_at(k, x[:, k]))
    out = left[:, 0]
    return float(out[0]) if single else out


def random_tt(bases, rank, rng, dims=None):
    """Tensor train with standard normal cores and all inner ranks ``rank``."""
    d = len(bases)
    ranks = [1] + [rank] * (d - 1) + [1]
    cores = [rng.standard_normal((ranks[k], bases[k].size, ranks[k + 1])) for k in range(d)]
    return FunctionalTensorTrain(cores, bases, dims)


@dataclass(frozen=True)
class CrossConfig:
    """Settings of the alternating cross approximation.

    Attributes
    ----------
    max_rank : int
        Upper bound on every inner rank.
    init_rank : int
        Rank of the random starting tensor train.
    tolerance : float
        Target relative maximum error on the validation sample. The SVD
        truncation threshold is ``tolerance / sqrt(d - 1)``.
    max_sweeps : int
        Maximum number of half-sweeps (one direction each).
    validation_size : int
        Number of fresh random grid points used to monitor the error after
        every half-sweep.
    enrichment : int
        Random columns appended to each unfolding before pivot selection while
        the error target has not been met.
    fixed_rank : bool
        Skip tolerance-based truncation and keep ranks at ``max_rank`` where
        the grid permits.
    seed : int
        Seed of the generator used for initialization, enrichment and
        validation points.
    """

    max_rank: int = 20
    init_rank: int = 4
    tolerance: float = 1e-4
    max_sweeps: int = 10
    validation_size: int = 200
    enrichment: int = 2
    fixed_rank: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.init_rank <= self.max_rank:
            raise ValueError("need 1 <= init_rank <= max_rank")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.validation_size < 100:
            raise ValueError("validation_size must be at least 100")
        if self.enrichment < 0:
            raise ValueError("enrichment must be nonnegative")


def maxvol(a, tol=1.05, max_iters=200):
    """Row indices of a dominant ``r x r`` submatrix of a tall ``(n, r)`` matrix.

    Starts from the LU pivot rows and swaps rows until every entry of
    ``a @ inv(a[rows])`` is at most ``tol`` in magnitude.
    """
    n, r = a.shape
    if r == 0:
        return np.zeros(0, dtype=int)
    if n <= r:
        return np.arange(n)
    piv = scipy.linalg.lu_factor(a, check_finite=False)[1]
    perm = np.arange(n)
    for i, p in enumerate(piv):
        perm[i], perm[p] = perm[p], perm[i]
    rows = perm[:r].copy()
    b = scipy.linalg.solve(a[rows].T, a.T).T
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= tol:
            break
        rows[j] = i
        bj = b[:, j].copy()
        bi = b[i, :].copy()
        bi[j] -= 1.0
        b -= np.outer(bj, bi / b[i, j])
    return rows


class _Oracle:
    def __init__(self, f, bases):
        self.f = f
        self.nodes = [b.nodes for b in bases]
        self.count = 0

    def __call__(self, idx):
        pts = np.column_stack([self.nodes[k][idx[:, k]] for k in range(idx.shape[1])])
        vals = np.asarray(self.f(pts), dtype=float).reshape(-1)
        if vals.shape[0] != pts.shape[0]:
            raise BuildError(f"oracle returned {vals.shape[0]} values for {pts.shape[0]} points")
        self.count += pts.shape[0]
        bad = ~np.isfinite(vals)
        if np.any(bad):
            point = pts[np.argmax(bad)]
            raise BuildError(f"oracle returned a non-finite value at {point}", point=point)
        return vals


def _supercore_indices(left, n, right):
    """Multi-indices for ``(left rows) x (grid) x (right columns)``."""
    rl, rr = left.shape[0], right.shape[0]
    ii = np.arange(n)
    parts = [
        np.broadcast_to(left[:, None, None, :], (rl, n, rr, left.shape[1])),
        np.broadcast_to(ii[None, :, None, None], (rl, n, rr, 1)),
        np.broadcast_to(right[None, None, :, :], (rl, n, rr, right.shape[1])),
    ]
    return np.concatenate(parts, axis=3).reshape(-1, left.shape[1] + 1 + right.shape[1])


def _truncated_basis(mat, delta, rank_cap, kick, fixed_rank, rng):
    """Orthonormal column basis of ``mat`` after truncation and enrichment."""
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if fixed_rank:
        r = min(rank_cap, s.size)
    else:
        tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
        norm = tail[0] if tail.size else 0.0
        keep = np.flatnonzero(tail > delta * norm)
        r = int(keep[-1]) + 1 if keep.size else 1
        r = min(max(r, 1), rank_cap)
    u = u[:, :r]
    extra = min(rank_cap, mat.shape[0]) - r
    if fixed_rank:
        extra = max(extra, 0)
    else:
        extra = max(min(kick, extra), 0)
    if extra > 0:
        u = np.hstack([u, rng.standard_normal((mat.shape[0], extra))])
    q, _ = np.linalg.qr(u)
    return q


def _right_sets_from(tt, rank_cap):
    """Right index sets of an initial tensor train by QR and maxvol sweeps."""
    d = tt.ndim
    right = [None] * d
    right[d - 1] = np.zeros((1, 0), dtype=int)
    carry = tt.cores[d - 1]
    for k in range(d - 1, 0, -1):
        r0, n, r1 = carry.shape
        mat = carry.reshape(r0, n * r1).T
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        cap = min(rank_cap[k - 1], u.shape[1])
        q = u[:, :cap]
        rows = maxvol(q)
        right[k - 1] = np.hstack([(rows // r1)[:, None], right[k][rows % r1]])
        carry = np.tensordot(tt.cores[k - 1], mat[rows].T, axes=(2, 0))
    return right


def _rank_caps(sizes, max_rank):
    sizes = np.asarray(sizes, dtype=float)
    d = sizes.size
    caps = []
    for k in range(d - 1):
        left = np.prod(sizes[: k + 1])
        right = np.prod(sizes[k + 1 :])
        caps.append(int(min(max_rank, left, right)))
    return caps


def tt_cross(f, bases, config=None, init=None, dims=None, rng=None, return_info=False):
    """Build a tensor train interpolating ``f`` on the tensor grid of ``bases``.

    Alternating one-site cross: each step evaluates ``f`` on the product of
    the current left index set, the full grid of one variable and the
    current right index set, truncates the unfolding by SVD, optionally
    enriches it with random columns, and picks new pivots by maxvol.

    Parameters
    ----------
    f : callable
        Maps an ``(m, d)`` array of points to ``m`` finite values.
    bases : list of Basis1D
    config : CrossConfig, optional
    init : FunctionalTensorTrain, optional
        Starting tensor train on the same grids; its dominant index sets seed
        the first sweep.
    dims : tuple of int, optional
        ``(d_y, d_theta)`` recorded in the result.
    rng : numpy.random.Generator, optional
        Overrides ``config.seed``.
    return_info : bool
        Also return a dict with per-sweep errors and the pivot points of the
        final half-sweep.

    Returns
    -------
    tt : FunctionalTensorTrain
    eval_count : int
        Exact number of points passed to ``f``, validation included.
    achieved_error : float
        Relative maximum error ``max|f - g| / max|f|`` on the last validation
        sample.
    info : dict
        Only when ``return_info`` is true.
    """
    config = config or CrossConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    bases = list(bases)
    d = len(bases)
    sizes = [b.size for b in bases]
    oracle = _Oracle(f, bases)
    caps = _rank_caps(sizes, config.max_rank)
    delta = config.tolerance / np.sqrt(max(d - 1, 1))

    if d == 1:
        vals = oracle(np.arange(sizes[0])[:, None])
        tt = FunctionalTensorTrain([vals.reshape(1, -1, 1)], bases, dims)
        info = {"errors": [0.0], "pivots": tt.bases[0].nodes[:, None], "sweeps": 1}
        result = (tt, oracle.count, 0.0)
        return result + (info,) if return_info else result

    if init is not None:
        if tuple(init.grid_sizes) != tuple(sizes):
            raise StructureError("initial tensor train has different grid sizes")
        start = init
    else:
        start = random_tt(bases, config.init_rank, rng)
    right = _right_sets_from(start, caps)
    left = [None] * d
    empty = np.zeros((1, 0), dtype=int)

    cores = [None] * d
    errors = []
    below = 0
    pivots = None
    turning = None
    forward = True
    for sweep in range(config.max_sweeps):
        kick = 0 if (errors and errors[-1] <= config.tolerance) else config.enrichment
        if forward:
            for k in range(d):
                lset = left[k - 1] if k > 0 else empty
                if k == 0 and turning is not None:
                    block = turning
                else:
                    block = oracle(_supercore_indices(lset, sizes[k], right[k]))
                    block = block.reshape(lset.shape[0], sizes[k], right[k].shape[0])
                if k == d - 1:
                    cores[k] = block
                    turning = block
                    pivots = _supercore_indices(lset, sizes[k], right[k])
                    break
                r0, n, _ = block.shape
                q = _truncated_basis(
                    block.reshape(r0 * n, -1), delta, caps[k], kick, config.fixed_rank, rng
                )
                rows = maxvol(q)
                left[k] = np.hstack([lset[rows // n], (rows % n)[:, None]])
                cores[k] = np.linalg.solve(q[rows].T, q.T).T.reshape(r0, n, -1)
        else:
            for k in range(d - 1, -1, -1):
                rset = right[k] if k < d - 1 else empty
                if k == d - 1 and turning is not None:
                    block = turning
                else:
                    block = oracle(_supercore_indices(left[k - 1] if k > 0 else empty, sizes[k], rset))
                    lrows = left[k - 1].shape[0] if k > 0 else 1
                    block = block.reshape(lrows, sizes[k], rset.shape[0])
                if k == 0:
                    cores[k] = block
                    turning = block
                    pivots = _supercore_indices(empty, sizes[0], rset)
                    break
                _, n, r1 = block.shape
                mat = block.reshape(block.shape[0], n * r1).T
                q = _truncated_basis(mat, delta, caps[k - 1], kick, config.fixed_rank, rng)
                rows = maxvol(q)
                right[k - 1] = np.hstack([(rows // r1)[:, None], rset[rows % r1]])
                interp = np.linalg.solve(q[rows].T, q.T).T
                cores[k] = interp.reshape(n, r1, -1).transpose(2, 0, 1)
        tt = FunctionalTensorTrain(cores, bases, dims)
        errors.append(_validation_error(tt, oracle, sizes, config.validation_size, rng))
        below = below + 1 if errors[-1] <= config.tolerance else 0
        forward = not forward
        if below >= 2:
            break

    info = {
        "errors": errors,
        "sweeps": len(errors),
        "pivots": np.column_stack([bases[k].nodes[pivots[:, k]] for k in range(d)]),
    }
    result = (tt, oracle.count, float(errors[-1]))
    return result + (info,) if return_info else result


def _validation_error(tt, oracle, sizes, n, rng):
    idx = np.column_stack([rng.integers(0, s, n) for s in sizes])
    fv = oracle(idx)
    gv = _eval_at_indices(tt, idx)
    scale = np.max(np.abs(fv))
    err = np.max(np.abs(fv - gv))
    if scale == 0.0:
        return float(err)
    return float(err / scale)


def _eval_at_indices(tt, idx):
    left = tt.cores[0][0, idx[:, 0], :]
    for k in range(1, tt.ndim):
        left = np.einsum("ma,amb->mb", left, tt.cores[k][:, idx[:, k], :])
    return left[:, 0]


def l2_error_estimate(tt, f, n_samples, rng=None):
    """Monte Carlo estimate of the L2 distance between ``f`` and ``tt`` on its box.

    Returns
    -------
    value : float
        Estimate of ``sqrt(int (f - g)^2 dx)`` over the domain box.
    std_error : float
        Delta-method standard error of ``value``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    lo, hi = tt.lower, tt.upper
    x = lo + (hi - lo) * rng.random((n_samples, tt.ndim))
    sq = (np.asarray(f(x), dtype=float) - eval_tt(tt, x)) ** 2
    vol = tt.volume
    mean = vol * sq.mean()
    value = float(np.sqrt(mean))
    if n_samples < 2 or value == 0.0:
        return value, 0.0
    se_mean = vol * sq.std(ddof=1) / np.sqrt(n_samples)
    return value, float(se_mean / (2.0 * value))
