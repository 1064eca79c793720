"""Command line entry point: ``layerstrip {phantom,forward,invert,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(non-convergence or solver breakdown), 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import fem
from .config import ConfigError, RunConfig, load_config
from .forward import DataError, read_measurements, write_measurements
from .inversion import InversionError
from .mesh import MeshError, read_field, write_field
from .phantoms import PhantomError
from .tail import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("layerstrip")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "example", None) is not None:
        over["example"] = args.example
    return cfg.replace(**over) if over else cfg


def cmd_phantom(args) -> int:
    from . import pipeline
    cfg = _config(args)
    mu = pipeline.build_phantom(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_field(os.path.join(args.out, "phantom.field"), mu)
    pipeline.write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "phantom",
                            {"example": cfg.example})
    print(f"phantom example {cfg.example} -> {args.out}")
    return EXIT_OK


def cmd_forward(args) -> int:
    from . import pipeline
    cfg = _config(args)
    mu = read_field(args.truth) if args.truth else pipeline.build_phantom(cfg)
    ms = pipeline.forward(cfg, mu)
    os.makedirs(args.out, exist_ok=True)
    write_measurements(os.path.join(args.out, "measurements.txt"), ms)
    pipeline.write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "forward",
                            {"seed": cfg.seed, "phantom": args.truth or f"example {cfg.example}"})
    print(f"{ms.schedule.P} sources x {len(ms.points)} points -> {args.out}")
    return EXIT_OK


def cmd_invert(args) -> int:
    from . import pipeline
    cfg = _config(args)
    ms = read_measurements(args.measurements, pipeline.geometry(cfg), cfg.denoise_degree)
    truth = read_field(args.truth) if args.truth else None
    try:
        run = pipeline.invert(cfg, ms, truth)
    except InversionError as exc:
        if exc.partial is not None:
            _write_partial(args.out, exc.partial)
        raise
    pipeline.write_bundle(args.out, cfg, run, truth)
    msg = f"tail iterations {run.accel.tail.iterations}; bundle -> {args.out}"
    if run.metrics is not None:
        msg += f"; RMSE {run.metrics.rmse:.6f} MAE {run.metrics.mae:.6f} ME {run.metrics.me:.6f}"
    print(msg)
    return EXIT_OK


def _write_partial(out, partial) -> None:
    os.makedirs(out, exist_ok=True)
    write_field(os.path.join(out, "a_partial.field"), partial.a)
    for n, q in enumerate(partial.q.fields, 1):
        write_field(os.path.join(out, f"q_{n}.field"), q)


def cmd_report(args) -> int:
    from . import pipeline
    if not args.truth:
        raise ConfigError("report needs --truth")
    bundle = pipeline.read_bundle(args.bundle)
    truth = read_field(args.truth)
    out = args.out or args.bundle
    rep = pipeline.report(bundle, truth, out)
    print(f"RMSE {rep.rmse:.15g}\nMAE {rep.mae:.15g}\nME {rep.me:.15g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layerstrip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="noise seed (overrides the config)")
        sp.add_argument("--example", type=int, choices=(0, 1, 2, 3),
                        help="phantom example; 0 is the inclusion-free background")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--truth", help="mu_a phantom field file")

    sp = sub.add_parser("phantom", help="write the absorption phantom on the forward mesh")
    common(sp)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("forward", help="simulate, perturb and process boundary data")
    common(sp)
    sp.set_defaults(func=cmd_forward)

    sp = sub.add_parser("invert", help="reconstruct from a measurement file")
    common(sp)
    sp.add_argument("measurements", help="measurement file written by 'forward'")
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("report", help="convergence curves and metrics of a bundle")
    common(sp, out_required=False)
    sp.add_argument("bundle", help="result bundle directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PhantomError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, InversionError, fem.SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataError, MeshError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
