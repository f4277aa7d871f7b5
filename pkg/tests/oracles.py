"""Independent reference computations used by several test modules.

None of these helpers call into the package's numerical kernels.
"""
import itertools

import numpy as np
from scipy.interpolate import RegularGridInterpolator


def cell_gauss_rule(nodes, m=4):
    """Gauss-Legendre points and weights with ``m`` points per grid cell."""
    t, w = np.polynomial.legendre.leggauss(m)
    lo, hi = nodes[:-1, None], nodes[1:, None]
    pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t
    wts = 0.5 * (hi - lo) * w
    return pts.ravel(), wts.ravel()


def dense_interpolant(cores, node_sets):
    """Multilinear interpolant of the full tensor assembled by plain contraction."""
    full = cores[0][0]
    for c in cores[1:]:
        full = np.tensordot(full, c, axes=([-1], [0]))
    full = full[..., 0]
    return RegularGridInterpolator(tuple(node_sets), full, method="linear"), full


def tensor_points(rules):
    pts = np.array(list(itertools.product(*[r[0] for r in rules])))
    wts = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))), axis=1)
    return pts, wts


def squared_quadrature(cores, node_sets, gamma=0.0, m=3):
    """Normalizing constant of ``g**2 + gamma`` and the grid data to reuse it.

    Gauss rules with ``m >= 2`` points per cell integrate the piecewise
    quadratic ``g**2`` exactly along each axis.
    """
    interp, _ = dense_interpolant(cores, node_sets)
    rules = [cell_gauss_rule(n, m) for n in node_sets]
    pts, wts = tensor_points(rules)
    vals = interp(pts) ** 2 + gamma
    return float(np.sum(vals * wts)), interp, rules


def marginal_by_quadrature(interp, rules, gamma, prefix):
    """Unnormalized marginal of ``g**2 + gamma`` over variables after ``prefix``."""
    k = prefix.shape[1]
    rest = rules[k:]
    if not rest:
        return interp(prefix) ** 2 + gamma
    pts, wts = tensor_points(rest)
    out = np.empty(len(prefix))
    for i, p in enumerate(prefix):
        full = np.column_stack([np.broadcast_to(p, (len(pts), k)), pts])
        out[i] = np.sum((interp(full) ** 2 + gamma) * wts)
    return out


def gaussian_posterior(G, y):
    """Posterior of ``theta ~ N(0, I)`` given ``y = G theta + e``, ``e ~ N(0, I)``."""
    cov = np.linalg.inv(np.eye(G.shape[1]) + G.T @ G)
    return cov @ G.T @ y, cov


def gaussian_hellinger_closed_form(m1, s1, m2, s2):
    """Hellinger distance between two univariate normals, ``D^2 = 1 - BC``."""
    bc = np.sqrt(2 * s1 * s2 / (s1**2 + s2**2)) * np.exp(-((m1 - m2) ** 2) / (4 * (s1**2 + s2**2)))
    return float(np.sqrt(1 - bc))
