"""Deep inverse Rosenblatt transports built over tempered bridging densities.

Layer 0 approximates the first bridging density on the target box. Each
later layer approximates the next bridging density pulled back through the
composition of the earlier layers, on the reference box. The composite map
pushes the reference product measure to an approximation of the target and
stays lower triangular, so conditioning on observations only needs the
observation prefix of every layer.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .basis import Basis1D
from .diagnostics import ess, hellinger_from_log_weights
from .errors import BuildError, DomainError, StructureError
from .sirt import ReferenceMeasure, Transport, build_sirt
from .tensor_train import CrossConfig

__all__ = [
    "TemperingSchedule",
    "DirtConfig",
    "DirtTransport",
    "DirtConditional",
    "CountingTarget",
    "build_dirt",
    "bridging_logpdf",
    "next_beta_adaptive",
    "adaptive_hellinger",
    "sir_preset",
]

_BETA_SNAP = 1e-9


@dataclass(frozen=True)
class TemperingSchedule:
    """Sequence of inverse temperatures ending at one.

    ``geometric`` multiplies ``beta0`` by ``ratio`` until reaching one,
    ``uniform`` uses ``l / n_levels`` for ``l = 1..n_levels``, ``explicit``
    takes ``values`` as given (nondecreasing, ending at one; repeated ones
    add correction layers for the same density), and ``adaptive`` picks each
    increment so that consecutive bridging densities are ``eta`` apart in
    estimated Hellinger distance.
    """

    kind: str = "geometric"
    beta0: float = 1e-4
    ratio: float = float(np.sqrt(10.0))
    n_levels: int = 4
    eta: float = 0.2
    n_adapt_samples: int = 10_000
    max_levels: int = 100
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("geometric", "uniform", "explicit", "adaptive"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "explicit":
            v = np.asarray(self.values, dtype=float)
            if v.size == 0 or v[-1] != 1.0 or np.any(v <= 0) or np.any(np.diff(v) < 0):
                raise ValueError("explicit values must be positive, nondecreasing and end at one")
            object.__setattr__(self, "values", tuple(float(b) for b in v))
        if not 0 < self.beta0 <= 1:
            raise ValueError("beta0 must lie in (0, 1]")
        if self.kind == "geometric" and not self.ratio > 1:
            raise ValueError("ratio must exceed one")
        if self.n_levels < 1 or self.max_levels < 1:
            raise ValueError("level counts must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")

    def betas(self):
        """Fixed schedules as a list; ``None`` for the adaptive kind."""
        if self.kind == "adaptive":
            return None
        if self.kind == "explicit":
            return list(self.values)
        if self.kind == "uniform":
            return [(l + 1) / self.n_levels for l in range(self.n_levels)]
        out = [self.beta0]
        while out[-1] < 1.0:
            b = out[-1] * self.ratio
            out.append(1.0 if b >= 1.0 - _BETA_SNAP else b)
            if len(out) > self.max_levels:
                raise ValueError("schedule exceeds max_levels")
        return out


@dataclass(frozen=True)
class DirtConfig:
    """Settings of a DIRT build.

    Attributes
    ----------
    n_grid : int or tuple of int
        Nodes per variable, shared by all layers.
    cross : CrossConfig
        Cross settings of every layer.
    schedule : TemperingSchedule
    reference : ReferenceMeasure
    gamma_rel : float
        Defensive constant as a fraction of ``tt_mass / volume``.
    hellinger_samples : int
        Samples per layer for the logged Hellinger estimate; zero skips it.
    reuse_init : bool
        Seed each layer's cross with the previous layer's tensor train.
    face_inset : float
        On layers after the first, values at the boundary nodes of the
        reference box are sampled this fraction of a cell inside the face.
        The pulled-back density can carry a thin spike exactly on a face
        where the earlier layers' density sits at its floor; sampling it
        there would let a set of negligible mass drive pivot selection.
    seed : int
    """

    n_grid: object = 17
    cross: CrossConfig = field(default_factory=CrossConfig)
    schedule: TemperingSchedule = field(default_factory=TemperingSchedule)
    reference: ReferenceMeasure = field(default_factory=ReferenceMeasure)
    gamma_rel: float = 1e-8
    hellinger_samples: int = 1000
    reuse_init: bool = True
    face_inset: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.gamma_rel < 0:
            raise ValueError("gamma_rel must be nonnegative")
        if self.hellinger_samples < 0:
            raise ValueError("hellinger_samples must be nonnegative")
        if not 0 <= self.face_inset < 0.5:
            raise ValueError("face_inset must lie in [0, 0.5)")
        sizes = np.atleast_1d(self.n_grid)
        if np.any(sizes < 2):
            raise ValueError("grids need at least two nodes")

    def grid_sizes(self, d):
        sizes = np.atleast_1d(np.asarray(self.n_grid, dtype=int))
        if sizes.size == 1:
            return [int(sizes[0])] * d
        if sizes.size != d:
            raise StructureError(f"n_grid has {sizes.size} entries for {d} variables")
        return [int(s) for s in sizes]

    def as_dict(self):
        out = asdict(self)
        if not np.isscalar(self.n_grid):
            out["n_grid"] = [int(s) for s in np.atleast_1d(self.n_grid)]
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        kw = {}
        for key in ("n_grid", "gamma_rel", "hellinger_samples", "reuse_init", "face_inset", "seed"):
            if key in data:
                kw[key] = data.pop(key)
        if "cross" in data:
            kw["cross"] = CrossConfig(**data.pop("cross"))
        if "schedule" in data:
            kw["schedule"] = TemperingSchedule(**data.pop("schedule"))
        if "reference" in data:
            kw["reference"] = ReferenceMeasure(**data.pop("reference"))
        if data:
            raise ValueError(f"unknown config keys: {sorted(data)}")
        return cls(**kw)


def sir_preset(seed=0, hellinger_samples=1000):
    """Settings matching the published SIR benchmark cost.

    Seventeen nodes per variable, rank 17, one forward sweep per layer with
    100 validation points, geometric tempering from ``1e-4`` with ratio
    ``sqrt(10)`` (nine layers), truncated Gaussian reference on ``[-3, 3]``.
    """
    return DirtConfig(
        n_grid=17,
        cross=CrossConfig(max_rank=17, init_rank=17, tolerance=1e-4, max_sweeps=1,
                          validation_size=100, enrichment=0, fixed_rank=True, seed=seed),
        schedule=TemperingSchedule("geometric", beta0=1e-4, ratio=float(np.sqrt(10.0))),
        reference=ReferenceMeasure("truncated_gaussian", 3.0),
        gamma_rel=1e-8,
        hellinger_samples=hellinger_samples,
        reuse_init=True,
        seed=seed,
    )


class CountingTarget:
    """Wraps a target and counts points passed to ``log_joint``."""

    def __init__(self, target):
        self.target = target
        self.count = 0

    def __getattr__(self, name):
        return getattr(self.target, name)

    def log_joint(self, x):
        x = np.atleast_2d(x)
        self.count += x.shape[0]
        return self.target.log_joint(x)

    def log_ratio(self, x):
        return self.log_joint(x) - self.target.log_reference(x)


def bridging_logpdf(target, beta, x, log_joint=None):
    """Unnormalized log bridging density ``beta log(pi / base) + log base``."""
    lj = target.log_joint(x) if log_joint is None else log_joint
    lb = target.log_base(x)
    return beta * (lj - lb) + lb


def adaptive_hellinger(log_phi, log_w, delta):
    """Estimated Hellinger distance between bridging densities ``delta`` apart.

    ``log_phi`` holds ``log(pi / base)`` and ``log_w`` the log weights of the
    current bridging density against the current approximation, both at
    samples of the approximation. Self-normalized, so the result does not
    depend on constants added to either array.
    """
    log_phi = np.asarray(log_phi, dtype=float)
    log_w = np.asarray(log_w, dtype=float)
    a = log_w + 0.5 * delta * log_phi
    b = log_w + delta * log_phi
    log_bc = logsumexp(a) - 0.5 * (logsumexp(log_w) + logsumexp(b))
    return float(np.sqrt(max(0.0, 1.0 - np.exp(min(log_bc, 0.0)))))


def next_beta_adaptive(beta, log_phi, log_w, eta, tol=1e-3):
    """Next inverse temperature from samples of the current approximation.

    Bisects the increment so the estimated Hellinger distance to the next
    bridging density equals ``eta`` within ``tol``; returns one when the
    full remaining increment stays below ``eta``.
    """
    finite = np.isfinite(log_w) & np.isfinite(log_phi)
    if not np.any(finite):
        raise BuildError("all adaptive tempering weights are degenerate",
                         diagnostics={"ess": 0.0})
    log_phi, log_w = log_phi[finite], log_w[finite]
    if ess(log_w) < 1.0 + 1e-12 and log_w.size > 1:
        raise BuildError("adaptive tempering weights collapsed onto one sample",
                         diagnostics={"ess": ess(log_w)})
    hi = 1.0 - beta
    if adaptive_hellinger(log_phi, log_w, hi) <= eta:
        return 1.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d = adaptive_hellinger(log_phi, log_w, mid)
        if abs(d - eta) <= tol:
            return beta + mid
        if d < eta:
            lo = mid
        else:
            hi = mid
    return beta + 0.5 * (lo + hi)


class DirtConditional:
    """Conditional transport of ``theta`` given one observation vector.

    The observation vector is pushed through the observation block of every
    layer once, at construction.
    """

    def __init__(self, dirt, y):
        self.dirt = dirt
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != dirt.d_y_original:
            raise StructureError(f"expected {dirt.d_y_original} observations, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise DomainError("observations must be finite")
        self.y = y
        yw = dirt.precond.apply_y(y[None, :])[0] if dirt.precond is not None else y
        self.maps = []
        self.log_marginal = 0.0
        cur = yw
        for l, tr in enumerate(dirt.transports):
            cm = tr.condition(cur)
            self.maps.append(cm)
            self.log_marginal += cm.log_marginal
            if l > 0:
                self.log_marginal -= float(dirt.reference.logpdf(cur))
            cur = cm.z_y

    @property
    def d_theta(self):
        return self.dirt.dims[1]

    def _ref_logpdf(self, v):
        return self.dirt.reference.logpdf(v)

    def map(self, z_theta):
        """Conditional samples from reference points, with log conditional densities."""
        v = np.atleast_2d(np.asarray(z_theta, dtype=float))
        if v.shape[1] != self.d_theta:
            raise StructureError(f"expected {self.d_theta} coordinates, got {v.shape[1]}")
        logp = np.zeros(v.shape[0])
        for l in range(len(self.maps) - 1, -1, -1):
            v, lp = self.maps[l].map(v)
            logp += lp
            if l > 0:
                logp -= self._ref_logpdf(v)
        return self._to_original(v, logp)

    def _to_original(self, v, logp):
        pc = self.dirt.precond
        if pc is None:
            return v, logp
        return pc.unapply_theta(v), logp + pc.log_jacobian_theta

    def inverse(self, theta):
        """Reference coordinates of parameters, with log conditional densities."""
        v = np.atleast_2d(np.asarray(theta, dtype=float))
        pc = self.dirt.precond
        shift = 0.0
        if pc is not None:
            v = pc.apply_theta(v)
            shift = pc.log_jacobian_theta
        logp = np.zeros(v.shape[0])
        for l, cm in enumerate(self.maps):
            if l > 0:
                logp -= self._ref_logpdf(v)
            v, lp = cm.inverse(v)
            logp += lp
        return v, logp + shift

    def logpdf(self, theta):
        return self.inverse(theta)[1]

    def sample(self, n, rng=None, return_logpdf=False):
        rng = rng if rng is not None else np.random.default_rng()
        z = self.dirt.reference.sample(n, self.d_theta, rng)
        theta, logp = self.map(z)
        return (theta, logp) if return_logpdf else theta


class DirtTransport:
    """Composition of squared tensor-train transports.

    Joint methods (:meth:`forward`, :meth:`inverse`, :meth:`logpdf`,
    :meth:`sample`) work in the coordinates the layers were built in, which
    are the target's own coordinates unless a preconditioner is attached.
    :meth:`condition` takes observations and returns parameters in original
    coordinates.

    Attributes
    ----------
    layers : list of SirtTransport
    betas : list of float
    reference : ReferenceMeasure
    precond : Preconditioner or None
    build_log : list of dict
    """

    def __init__(self, layers, betas, reference, precond=None, build_log=None, meta=None):
        if len(layers) != len(betas) or not layers:
            raise StructureError("need one inverse temperature per layer")
        dims = layers[0].dims
        for s in layers:
            if s.dims != dims:
                raise StructureError("all layers must share the variable split")
        self.layers = list(layers)
        self.betas = [float(b) for b in betas]
        self.reference = reference
        self.precond = precond
        self.build_log = list(build_log or [])
        self.meta = dict(meta or {})
        self.transports = [Transport(s) for s in self.layers]
        self.dims = dims

    @property
    def d(self):
        return sum(self.dims)

    @property
    def d_y_original(self):
        return self.precond.d_y if self.precond is not None else self.dims[0]

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def total_evals(self):
        return int(sum(e.get("cross_evals", 0) + e.get("extra_evals", 0) for e in self.build_log))

    def truncated(self, n_layers):
        """Transport made of the first ``n_layers`` layers."""
        return DirtTransport(self.layers[:n_layers], self.betas[:n_layers], self.reference,
                             self.precond, self.build_log[:n_layers], self.meta)

    def forward(self, z, return_logpdf=False):
        """Push reference points through all layers; optionally with log densities."""
        v = np.atleast_2d(np.asarray(z, dtype=float))
        if v.shape[1] != self.d:
            raise StructureError(f"expected {self.d} coordinates, got {v.shape[1]}")
        logp = np.zeros(v.shape[0])
        for l in range(self.n_layers - 1, -1, -1):
            v, lp = self.transports[l].forward(v, return_logpdf=True)
            logp += lp
            if l > 0:
                logp -= self.reference.logpdf(v)
        return (v, logp) if return_logpdf else v

    def inverse(self, x, return_logpdf=False):
        v = np.atleast_2d(np.asarray(x, dtype=float))
        if v.shape[1] != self.d:
            raise StructureError(f"expected {self.d} coordinates, got {v.shape[1]}")
        logp = np.zeros(v.shape[0])
        for l, tr in enumerate(self.transports):
            if l > 0:
                logp -= self.reference.logpdf(v)
            v, lp = tr.inverse(v, return_logpdf=True)
            logp += lp
        return (v, logp) if return_logpdf else v

    def logpdf(self, x):
        return self.inverse(x, return_logpdf=True)[1]

    def sample(self, n, rng=None, return_logpdf=False):
        rng = rng if rng is not None else np.random.default_rng()
        z = self.reference.sample(n, self.d, rng)
        return self.forward(z, return_logpdf=return_logpdf)

    def condition(self, y):
        return DirtConditional(self, y)

    def __repr__(self):
        return f"DirtTransport(layers={self.n_layers}, dims={self.dims}, betas={self.betas})"


def _sqrt_oracle(log_density, lo=None, hi=None):
    """Square root of ``exp(log_density)`` with a scale fixed at the first call.

    Points are clipped to ``[lo, hi]`` first when the bounds are given.
    """
    state = {"shift": None}

    def f(x):
        if lo is not None:
            x = np.clip(x, lo, hi)
        lv = np.asarray(log_density(x), dtype=float)
        if state["shift"] is None:
            good = lv[np.isfinite(lv)]
            state["shift"] = float(good.max()) if good.size else 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(0.5 * (lv - state["shift"]))

    return f


def build_dirt(target, config=None, precond=None, rng=None, progress=None):
    """Build a DIRT for ``target``.

    Parameters
    ----------
    target : TargetDensity
    config : DirtConfig, optional
    precond : Preconditioner, optional
        When given, layers are built for the target in preconditioned
        coordinates.
    rng : numpy.random.Generator, optional
        Overrides ``config.seed``.
    progress : callable, optional
        Called with each layer's log entry.

    Returns
    -------
    DirtTransport
        ``build_log`` has one entry per layer with ``beta``, ``cross_evals``
        (cross and validation), ``extra_evals`` (diagnostic and adaptive
        samples), ``achieved_error``, ``ranks``, ``seconds`` and the
        Hellinger estimate between the layer's approximation and its
        bridging density.

    Raises
    ------
    BuildError
        With the failing layer index and, for non-finite densities, the point.
    """
    config = config or DirtConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if precond is not None:
        from .precondition import PreconditionedTarget

        work = PreconditionedTarget(target, precond)
    else:
        work = target
    counted = CountingTarget(work)
    d = work.d
    sizes = config.grid_sizes(d)
    ref = config.reference
    bases0 = [Basis1D.uniform(work.lower[i], work.upper[i], sizes[i]) for i in range(d)]
    bases_ref = [Basis1D.uniform(ref.lower, ref.upper, sizes[i]) for i in range(d)]
    sched = config.schedule
    fixed = sched.betas()
    betas = []
    layers = []
    log = []
    beta = fixed[0] if fixed is not None else sched.beta0
    while True:
        l = len(layers)
        t0 = time.perf_counter()
        before = counted.count
        if l == 0:
            logq = lambda x, b=beta: bridging_logpdf(counted, b, x)
            bases = bases0
        else:
            current = DirtTransport(layers, betas, ref)

            def logq(z, b=beta, cur=current):
                x, logp = cur.forward(z, return_logpdf=True)
                return bridging_logpdf(counted, b, x) + ref.logpdf(z) - logp

            bases = bases_ref
        init = None
        if config.reuse_init and layers and layers[-1].tt.grid_sizes == tuple(sizes):
            init = layers[-1].tt
        try:
            if l == 0 or config.face_inset == 0:
                oracle = _sqrt_oracle(logq)
            else:
                step = config.face_inset * np.array([b.widths[0] for b in bases])
                oracle = _sqrt_oracle(logq, ref.lower + step, ref.upper - step)
            sirt, info = build_sirt(oracle, bases, work.dims, config.cross, 0.0,
                                    ref, init=init, rng=rng)
        except BuildError as exc:
            raise BuildError(f"layer {l}: {exc}", layer=l, point=exc.point,
                             diagnostics=exc.diagnostics) from exc
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            raise BuildError(f"layer {l}: {exc}", layer=l) from exc
        if config.gamma_rel > 0:
            sirt = sirt.with_gamma(config.gamma_rel * sirt.tt_mass / sirt.tt.volume)
        cross_evals = counted.count - before
        layers.append(sirt)
        betas.append(beta)
        entry = {
            "layer": l,
            "beta": beta,
            "cross_evals": int(cross_evals),
            "eval_count": int(info["eval_count"]),
            "achieved_error": float(info["achieved_error"]),
            "ranks": [int(r) for r in sirt.tt.ranks],
            "gamma": sirt.gamma,
        }
        # Samples of the new approximation serve both the log and the next temperature.
        n_diag = config.hellinger_samples
        need_adapt = fixed is None and beta < 1.0
        n_draw = max(n_diag, sched.n_adapt_samples if need_adapt else 0)
        next_beta = None
        extra_before = counted.count
        if n_draw > 0:
            cur = DirtTransport(layers, betas, ref)
            x, logp = cur.sample(n_draw, rng, return_logpdf=True)
            lj = counted.log_joint(x)
            lb = work.log_base(x)
            log_w = beta * (lj - lb) + lb - logp
            if n_diag > 0:
                entry["hellinger"] = hellinger_from_log_weights(log_w[:n_diag]).as_dict()
            if need_adapt:
                try:
                    next_beta = next_beta_adaptive(beta, lj - lb, log_w, sched.eta)
                except BuildError as exc:
                    raise BuildError(f"layer {l}: {exc}", layer=l,
                                     diagnostics=exc.diagnostics) from exc
        entry["extra_evals"] = int(counted.count - extra_before)
        entry["seconds"] = time.perf_counter() - t0
        log.append(entry)
        if progress is not None:
            progress(entry)
        if fixed is not None:
            if len(layers) == len(fixed):
                break
            beta = fixed[len(layers)]
        elif beta >= 1.0:
            break
        if fixed is None:
            beta = next_beta if next_beta is not None else min(1.0, beta * 10)
            if beta >= 1.0 - _BETA_SNAP:
                beta = 1.0
        if len(layers) >= sched.max_levels:
            raise BuildError(f"tempering did not reach one within {sched.max_levels} layers",
                             layer=len(layers))
    meta = {"target": getattr(target, "name", "target"), "dims_original": list(target.dims),
            "total_oracle_evals": int(counted.count)}
    return DirtTransport(layers, betas, ref, precond, log, meta)
