"""Sample-based accuracy measures for transports.

All weight arithmetic happens in log space with one max-shift per batch.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "HellingerEstimate",
    "hellinger_from_log_weights",
    "hellinger_from_samples",
    "ess",
    "conditional_error_histogram",
    "joint_hellinger",
    "expectation_error_bound",
    "summarize",
    "write_summary_json",
    "write_histogram_csv",
]

MIN_RELIABLE_ESS = 10.0


@dataclass(frozen=True)
class HellingerEstimate:
    """Estimated Hellinger distance with delta-method standard error.

    ``reliable`` is false when the importance weights have an effective
    sample size below ten.
    """

    value: float
    std_error: float
    n: int
    ess: float
    reliable: bool

    def as_dict(self):
        return asdict(self)


def ess(log_weights):
    """Effective sample size ``(sum w)^2 / sum w^2`` of log weights."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0:
        return 0.0
    if np.all(lw == -np.inf):
        return 0.0
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def hellinger_from_log_weights(log_w):
    """Self-normalized Hellinger estimate from ``log(pi / p)`` at samples of ``p``.

    Uses ``D^2 = 1 - mean(sqrt(w)) / sqrt(mean(w))``, which is invariant to
    the normalization of ``pi``.
    """
    lw = np.asarray(log_w, dtype=float).ravel()
    n = lw.size
    if n == 0:
        raise ValueError("need at least one sample")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log weights must not be NaN or +inf")
    top = np.max(lw)
    if top == -np.inf:
        return HellingerEstimate(1.0, 0.0, n, 0.0, False)
    s = np.exp(0.5 * (lw - top))
    mx = s.mean()
    my = np.mean(s**2)
    ratio = min(mx / np.sqrt(my), 1.0)
    value = float(np.sqrt(max(0.0, 1.0 - ratio)))
    if n > 1:
        cov = np.cov(np.vstack([s, s**2]), ddof=1)
        grad = np.array([my**-0.5, -0.5 * mx * my**-1.5])
        var_ratio = max(float(grad @ cov @ grad) / n, 0.0)
        se_ratio = np.sqrt(var_ratio)
        if value > 0:
            se = se_ratio / (2.0 * value)
        else:
            se = 0.0 if se_ratio == 0 else float(np.sqrt(se_ratio))
    else:
        se = 0.0
    e = ess(lw)
    return HellingerEstimate(value, float(min(se, 1.0)), n, e, e >= MIN_RELIABLE_ESS)


def hellinger_from_samples(log_p, log_pi_unnorm, samples=None):
    """Hellinger distance between ``pi`` and ``p`` from samples of ``p``.

    Parameters
    ----------
    log_p, log_pi_unnorm : callable or array_like
        Proposal log density and unnormalized target log density. When
        ``samples`` is given they are called on it; otherwise they are the
        already evaluated values.
    samples : ndarray, optional
    """
    if samples is not None:
        lp = np.asarray(log_p(samples), dtype=float)
        lpi = np.asarray(log_pi_unnorm(samples), dtype=float)
    else:
        lp = np.asarray(log_p, dtype=float)
        lpi = np.asarray(log_pi_unnorm, dtype=float)
    if not np.all(np.isfinite(lp)):
        raise ValueError("proposal log density must be finite at its own samples")
    return hellinger_from_log_weights(lpi - lp)


def joint_hellinger(dirt, target, n, rng):
    """Hellinger distance between a transport's joint density and the target."""
    x, logp = dirt.sample(n, rng, return_logpdf=True)
    return hellinger_from_samples(logp, target.log_joint(x))


def conditional_error_histogram(dirt, target, data, n_per_y, rng):
    """Per-observation Hellinger estimates of the conditional densities.

    Parameters
    ----------
    dirt : DirtTransport
    target : TargetDensity
        Provides ``log_posterior(y, theta)``, unnormalized.
    data : array_like, shape (k, d_y)
    n_per_y : int
    rng : numpy.random.Generator

    Returns
    -------
    estimates : list of HellingerEstimate
    summary : dict
        Quantiles, mean and pooled standard error of the estimates.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    estimates = []
    for y in data:
        cond = dirt.condition(y)
        theta, logq = cond.sample(n_per_y, rng, return_logpdf=True)
        estimates.append(hellinger_from_samples(logq, target.log_posterior(y, theta)))
    return estimates, summarize(estimates)


def summarize(estimates):
    vals = np.array([e.value for e in estimates])
    ses = np.array([e.std_error for e in estimates])
    if vals.size == 0:
        return {"count": 0}
    q = np.quantile(vals, [0.1, 0.25, 0.5, 0.75, 0.9])
    return {
        "count": int(vals.size),
        "mean": float(vals.mean()),
        "pooled_std_error": float(np.sqrt(np.sum(ses**2)) / vals.size),
        "median": float(q[2]),
        "quantiles": {"0.1": q[0], "0.25": q[1], "0.5": q[2], "0.75": q[3], "0.9": q[4]},
        "max": float(vals.max()),
        "unreliable": int(sum(not e.reliable for e in estimates)),
        "min_ess": float(min(e.ess for e in estimates)),
    }


def expectation_error_bound(eps, delta):
    """Multiplier ``4 eps / (sqrt(2) delta - 4 eps)`` of the expectation error bound.

    With probability at least ``1 - delta`` over the data, the posterior
    expectation error of a function ``h`` is at most this multiplier times
    the sum of its standard deviations under both densities, when the joint
    Hellinger error is at most ``eps``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not eps < np.sqrt(2) / 4:
        raise ValueError("eps must be smaller than sqrt(2) / 4")
    if not delta > 2 * np.sqrt(2) * eps:
        raise ValueError("delta must exceed 2 sqrt(2) eps")
    if delta > 1:
        raise ValueError("delta must not exceed one")
    return 4.0 * eps / (np.sqrt(2.0) * delta - 4.0 * eps)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, HellingerEstimate):
        return obj.as_dict()
    return obj


def write_summary_json(path, summary):
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")


def write_histogram_csv(path, estimates, data=None):
    """One row per observation with its Hellinger estimate, in round-trip precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["y_id", "hellinger", "std_error", "ess", "reliable"]
        if data is not None:
            header += [f"y{i + 1}" for i in range(np.shape(data)[1])]
        w.writerow(header)
        for i, e in enumerate(estimates):
            row = [i, f"{e.value:.17g}", f"{e.std_error:.17g}", f"{e.ess:.17g}", int(e.reliable)]
            if data is not None:
                row += [f"{v:.17g}" for v in data[i]]
            w.writerow(row)
