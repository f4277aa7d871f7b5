"""Variable ordering from gradient second moments.

Estimates the H matrices of a linear-Gaussian problem, compares them with
their closed forms, and prints the ordering, rotation spectrum and tail
bound used to reorder or truncate variables before a build.
"""
import numpy as np

from condirt import build_preconditioner, estimate_h_general
from condirt.models import random_linear_gaussian


def main():
    problem = random_linear_gaussian(4, 6, seed=2)
    h = estimate_h_general(problem, 10_000, np.random.default_rng(0))
    hy, ht = problem.exact_h_matrices()
    print(f"max |H_Y - G G^T| / SE = {np.max(np.abs(h.h_y - hy) / h.se_y):.2f}")
    print(f"max |H_theta - G^T G| / SE = {np.max(np.abs(h.h_theta - ht) / h.se_theta):.2f}")

    reorder = build_preconditioner(h, "reorder")
    print("data order:", reorder.order_y, "parameter order:", reorder.order_theta)

    rotate = build_preconditioner(h, "rotate", energy_threshold=0.05)
    print("eigenvalues of H_theta:", np.round(rotate.spectrum_theta, 3))
    print(f"keep {rotate.n_y} of 4 data and {rotate.n_theta} of 6 parameter directions, "
          f"tail bound {rotate.bound:.4f}")


if __name__ == "__main__":
    main()
