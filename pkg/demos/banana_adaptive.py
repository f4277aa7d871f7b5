"""Adaptive tempering on a curved two-dimensional density.

The inverse temperatures are chosen on the fly so that consecutive
bridging densities stay a fixed Hellinger distance apart.
"""
import numpy as np

from condirt import CrossConfig, DirtConfig, TemperingSchedule, build_dirt
from condirt.models import banana_target


def main():
    target = banana_target()
    config = DirtConfig(
        n_grid=49,
        cross=CrossConfig(max_rank=10, init_rank=4, max_sweeps=4),
        schedule=TemperingSchedule("adaptive", beta0=1e-2, eta=0.3, n_adapt_samples=5000),
        hellinger_samples=2000,
    )
    dirt = build_dirt(target, config, rng=np.random.default_rng(0))
    print("betas:", np.round(dirt.betas, 4))
    for entry in dirt.build_log:
        h = entry.get("hellinger")
        print(f"layer {entry['layer']}: beta {entry['beta']:.4f}, {entry['eval_count']} calls"
              + (f", Hellinger {h['value']:.4f}" if h else ""))

    x = dirt.sample(50_000, np.random.default_rng(1))
    print(f"mean of theta_2 {x[:, 1].mean():.3f} (exact 1.0), "
          f"correlation of theta_1^2 and theta_2 {np.corrcoef(x[:, 0] ** 2, x[:, 1])[0, 1]:.3f}")


if __name__ == "__main__":
    main()
