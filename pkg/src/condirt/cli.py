"""Command-line front end: ``build``, ``condition``, ``diagnose`` and ``reproduce-sir``.

Exit codes are 0 on success, 2 for configuration errors, 3 for numerical
build failures and 4 for input/output errors. The output directory and the
thread count can also come from ``CONDIRT_OUT`` and ``CONDIRT_THREADS``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_BUILD, EXIT_IO = 0, 2, 3, 4

_NUM = {"type": "number"}
_INT = {"type": "integer"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["sir", "lingauss", "diffusion1d", "banana"]},
                "params": {"type": "object"},
            },
        },
        "preset": {"enum": ["sir", "none"]},
        "n_grid": {"oneOf": [{"type": "integer", "minimum": 2},
                             {"type": "array", "items": {"type": "integer", "minimum": 2}}]},
        "gamma_rel": {"type": "number", "minimum": 0},
        "hellinger_samples": {"type": "integer", "minimum": 0},
        "reuse_init": {"type": "boolean"},
        "face_inset": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "reference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["uniform01", "truncated_gaussian"]}, "bound": _NUM},
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["geometric", "uniform", "explicit", "adaptive"]},
                "beta0": _NUM, "ratio": _NUM, "n_levels": _INT, "eta": _NUM,
                "n_adapt_samples": _INT, "max_levels": _INT,
                "values": {"type": "array", "items": _NUM},
            },
        },
        "cross": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_rank": _INT, "init_rank": _INT, "tolerance": _NUM, "max_sweeps": _INT,
                "validation_size": _INT, "enrichment": _INT, "fixed_rank": {"type": "boolean"},
                "seed": _INT,
            },
        },
        "preconditioner": {
            "type": "object",
            "additionalProperties": False,
            "required": ["strategy"],
            "properties": {
                "strategy": {"enum": ["reorder", "rotate"]},
                "n_y": _INT, "n_theta": _INT,
                "energy_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "samples": {"type": "integer", "minimum": 2},
                "gradient": {"enum": ["auto", "analytic", "fd"]},
            },
        },
    },
}


class ConfigError(Exception):
    """Invalid run configuration, with a line number when one is known."""


def _line_of(raw, path):
    """Line of the deepest key of ``path`` found in the raw JSON text."""
    line = None
    start = 0
    for key in path:
        if not isinstance(key, str):
            continue
        pos = raw.find(f'"{key}"', start)
        if pos < 0:
            break
        start = pos
        line = raw.count("\n", 0, pos) + 1
    return line


def load_config(path):
    """Parse and validate a JSON run configuration.

    Raises
    ------
    ConfigError
        With ``line N:`` prefixed when the problem can be located.
    OSError
        When the file cannot be read.
    """
    import jsonschema

    raw = Path(path).read_text()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        line = _line_of(raw, list(err.absolute_path))
        where = f"line {line}: " if line else ""
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}{loc}: {err.message}")
    return cfg


def dirt_config_from(cfg, seed=None):
    from .dirt import DirtConfig, sir_preset

    keys = ("n_grid", "gamma_rel", "hellinger_samples", "reuse_init", "face_inset",
            "reference", "schedule", "cross")
    body = {k: cfg[k] for k in keys if k in cfg}
    seed = cfg.get("seed", 0) if seed is None else seed
    try:
        if cfg.get("preset") == "sir":
            base = sir_preset(seed=seed).as_dict()
            for k, v in body.items():
                base[k] = dict(base[k], **v) if isinstance(v, dict) else v
            body = base
        body["seed"] = seed
        return DirtConfig.from_dict(body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid build settings: {exc}") from exc


def make_target(cfg):
    from .models import make_model

    spec = cfg["model"]
    try:
        return make_model(spec["name"], **spec.get("params", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc


def _precond_for(cfg, target, seed):
    import numpy as np

    from .precondition import build_preconditioner, estimate_h_general

    spec = cfg.get("preconditioner")
    if not spec:
        return None
    rng = np.random.default_rng([seed, 1])
    h = estimate_h_general(target, spec.get("samples", 10_000), rng,
                           gradient=spec.get("gradient", "auto"))
    try:
        return build_preconditioner(h, spec["strategy"], spec.get("energy_threshold"),
                                    spec.get("n_y"), spec.get("n_theta"))
    except ValueError as exc:
        raise ConfigError(f"invalid preconditioner settings: {exc}") from exc


def _out_dir(args, cfg=None):
    out = args.out or os.environ.get("CONDIRT_OUT") or (cfg or {}).get("output_dir") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    from .diagnostics import write_summary_json

    write_summary_json(path, obj)


def _fmt(v):
    return f"{float(v):.17g}"


def cmd_build(args):
    import numpy as np

    from .dirt import build_dirt
    from .serialize import save_dirt

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    dcfg = dirt_config_from(cfg, seed)
    target = make_target(cfg)
    out = _out_dir(args, cfg)
    precond = _precond_for(cfg, target, seed)
    t0 = time.perf_counter()
    dirt = build_dirt(target, dcfg, precond=precond, rng=np.random.default_rng(seed))
    elapsed = time.perf_counter() - t0
    dirt.meta["model"] = cfg["model"]
    dirt.meta["seed"] = seed
    path = out / "model.dirt"
    save_dirt(dirt, path)
    report = {
        "model": cfg["model"],
        "seed": seed,
        "config": dcfg.as_dict(),
        "n_layers": dirt.n_layers,
        "betas": dirt.betas,
        "layers": dirt.build_log,
        "total_oracle_evals": dirt.meta["total_oracle_evals"],
        "wall_seconds": elapsed,
        "dirt_file": str(path),
        "preconditioner": None if precond is None else {
            "strategy": precond.strategy, "n_y": precond.n_y, "n_theta": precond.n_theta,
            "bound": precond.bound,
        },
    }
    _write_json(out / "build_report.json", report)
    print(f"built {dirt.n_layers} layers in {elapsed:.1f} s, {report['total_oracle_evals']} "
          f"density evaluations -> {path}")
    return EXIT_OK


def _read_observations(path, d_y):
    import numpy as np

    text = Path(path).read_text().strip()
    if not text:
        raise ConfigError(f"{path}: no observations")
    try:
        if text[0] in "[{":
            data = json.loads(text)
            if isinstance(data, dict):
                data = data["y"]
            arr = np.atleast_2d(np.asarray(data, dtype=float))
        else:
            rows = [r for r in csv.reader(text.splitlines()) if r]
            try:
                [float(v) for v in rows[0]]
            except ValueError:
                rows = rows[1:]
            arr = np.atleast_2d(np.asarray(rows, dtype=float))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse observations: {exc}") from exc
    if arr.shape[1] != d_y:
        raise ConfigError(f"{path}: expected {d_y} values per observation, got {arr.shape[1]}")
    return arr


def cmd_condition(args):
    import numpy as np

    from .serialize import load_dirt

    dirt = load_dirt(args.dirt)
    ys = _read_observations(args.y, dirt.d_y_original)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    if args.n < 0:
        raise ConfigError("sample count must be nonnegative")
    d_t = dirt.precond.d_theta if dirt.precond is not None else dirt.dims[1]
    path = out / "samples.csv"
    t0 = time.perf_counter()
    streams = np.random.SeedSequence(seed).spawn(len(ys))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y_id", "sample_id"] + [f"theta_{i + 1}" for i in range(d_t)] + ["log_density"])
        if args.n > 0:
            for i, y in enumerate(ys):
                theta, logp = dirt.condition(y).sample(args.n, np.random.default_rng(streams[i]),
                                                       return_logpdf=True)
                for j in range(args.n):
                    w.writerow([i, j] + [_fmt(v) for v in theta[j]] + [_fmt(logp[j])])
    elapsed = time.perf_counter() - t0
    total = args.n * len(ys)
    rate = f", {1e6 * elapsed / total:.1f} us per sample" if total else ""
    print(f"wrote {total} samples for {len(ys)} observations to {path}{rate}")
    return EXIT_OK


def cmd_diagnose(args):
    import numpy as np

    from .diagnostics import conditional_error_histogram, joint_hellinger, write_histogram_csv
    from .serialize import load_dirt

    dirt = load_dirt(args.dirt)
    if args.config:
        cfg = load_config(args.config)
    elif "model" in dirt.meta:
        cfg = {"model": dirt.meta["model"]}
    else:
        raise ConfigError("the transport records no model; pass --config")
    target = make_target(cfg)
    if dirt.precond is not None:
        from .precondition import PreconditionedTarget

        work = PreconditionedTarget(target, dirt.precond)
    else:
        work = target
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    out = _out_dir(args)
    data = target.sample_joint(args.n_y, rng)[:, : target.d_y]
    estimates, summary = conditional_error_histogram(dirt, target, data, args.n_per_y, rng)
    summary["joint"] = joint_hellinger(dirt, work, args.n_per_y, rng).as_dict()
    summary["seed"] = seed
    write_histogram_csv(out / "hellinger_hist.csv", estimates, data)
    _write_json(out / "summary.json", summary)
    print(f"median conditional Hellinger {summary['median']:.4f} over {len(estimates)} observations")
    return EXIT_OK


def reproduce_sir(seed=0, n_data=32, n_per_y=10_000, out=None, progress=None):
    """Build the SIR preset and estimate conditional errors on synthetic data.

    Returns the report dictionary; when ``out`` is given also writes
    ``report.json``, ``hellinger_hist.csv`` and ``model.dirt`` there.
    """
    import numpy as np

    from .diagnostics import (conditional_error_histogram, hellinger_from_samples,
                              write_histogram_csv)
    from .dirt import build_dirt, sir_preset
    from .models import sir_target
    from .serialize import save_dirt

    target = sir_target()
    cfg = sir_preset(seed=seed)
    t0 = time.perf_counter()
    dirt = build_dirt(target, cfg, rng=np.random.default_rng(seed), progress=progress)
    build_seconds = time.perf_counter() - t0
    dirt.meta["model"] = {"name": "sir", "params": {}}
    rng = np.random.default_rng([seed, 2])
    data = target.sample_joint(n_data, rng)[:, : target.d_y]
    t1 = time.perf_counter()
    estimates, summary = conditional_error_histogram(dirt, target, data, n_per_y, rng)
    online = time.perf_counter() - t1
    # Observations from the balanced-rate case, drawn inside the box.
    theta_true = np.array([[0.1, 1.0]])
    while True:
        y_mm = target.synthetic_data(theta_true, rng)[0]
        if target.in_box(np.concatenate([y_mm, theta_true[0]])[None])[0]:
            break
    theta, logq = dirt.condition(y_mm).sample(n_per_y, rng, return_logpdf=True)
    mm = hellinger_from_samples(logq, target.log_posterior(y_mm, theta))
    report = {
        "seed": seed,
        "n_layers": dirt.n_layers,
        "betas": dirt.betas,
        "layers": dirt.build_log,
        "total_oracle_evals": dirt.meta["total_oracle_evals"],
        "cross_evals": int(sum(e["cross_evals"] for e in dirt.build_log)),
        "build_seconds": build_seconds,
        "histogram": summary,
        "estimates": [e.as_dict() for e in estimates],
        "multimodal": {"theta_true": theta_true[0], "y": y_mm, "hellinger": mm.as_dict()},
        "online_us_per_sample": 1e6 * online / max(n_data * n_per_y, 1),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        save_dirt(dirt, out / "model.dirt")
        write_histogram_csv(out / "hellinger_hist.csv", estimates, data)
        _write_json(out / "report.json", report)
    return report


def cmd_reproduce_sir(args):
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    report = reproduce_sir(seed, args.n_data, args.n_per_y, out)
    h = report["histogram"]
    print(f"median {h['median']:.4f}, multimodal {report['multimodal']['hellinger']['value']:.4f}, "
          f"{report['total_oracle_evals']} evaluations, build {report['build_seconds']:.1f} s")
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="condirt", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap, effective when set before numerical libraries load")
    common.add_argument("--out", default=None, help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", parents=[common], help="build a transport from a JSON config")
    b.add_argument("--config", required=True)
    b.set_defaults(func=cmd_build)

    c = sub.add_parser("condition", parents=[common], help="conditional samples for observations")
    c.add_argument("--dirt", required=True)
    c.add_argument("--y", required=True, help="CSV or JSON file with one observation per row")
    c.add_argument("-n", "--n", type=int, default=1000)
    c.set_defaults(func=cmd_condition)

    d = sub.add_parser("diagnose", parents=[common], help="Hellinger histogram on synthetic data")
    d.add_argument("--dirt", required=True)
    d.add_argument("--config", default=None)
    d.add_argument("--n-y", type=int, default=32)
    d.add_argument("--n-per-y", type=int, default=10_000)
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("reproduce-sir", parents=[common], help="SIR benchmark end to end")
    r.add_argument("--n-data", type=int, default=32)
    r.add_argument("--n-per-y", type=int, default=10_000)
    r.set_defaults(func=cmd_reproduce_sir)
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    threads = args.threads or os.environ.get("CONDIRT_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))
    from .errors import BuildError, DirtFormatError, StructureError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BuildError as exc:
        print(f"build error: {exc}", file=sys.stderr)
        return EXIT_BUILD
    except (DirtFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StructureError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
