"""Epidemic parameters from noisy infection counts.

Runs the full SIR benchmark (nine tempered layers on an eight-dimensional
joint density) and writes a report, a Hellinger histogram and the
transport file into ``sir_output/``. Takes a few minutes on one core.
Pass a smaller data count for a quicker run, e.g. ``python sir_epidemic.py 4``.
"""
import sys
from pathlib import Path

from condirt.cli import reproduce_sir


def main():
    n_data = int(sys.argv[1]) if len(sys.argv) > 1 else 32
    report = reproduce_sir(n_data=n_data, out=Path("sir_output"), progress=print)
    hist = report["histogram"]
    print(f"median Hellinger over {hist['count']} data sets: {hist['median']:.3f}")
    print(f"multimodal case theta = (0.1, 1): {report['multimodal']['hellinger']['value']:.3f}")
    print(f"{report['total_oracle_evals']} density calls, {report['build_seconds']:.0f} s offline, "
          f"{report['online_us_per_sample']:.0f} us per conditional sample")


if __name__ == "__main__":
    main()
