"""``cineflow simulate|reconstruct|evaluate|sweep``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or corrupt artifacts, infeasible mask), 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config as cfgmod, grid, mri, pipeline, simdata, solver

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3

log = logging.getLogger("cineflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="cineflow", description="Dynamic MRI reconstruction with complex optical flow.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults apply if omitted)")
        sp.add_argument("--seed", type=int, help="re-derive all component seeds from this base seed")
        sp.add_argument("--out", help="output directory (overrides output_dir)")

    common(sub.add_parser("simulate", help="phantom, velocities, coils, masks, k-space"))
    rp = sub.add_parser("reconstruct", help="reconstruct one model from simulated data")
    common(rp)
    rp.add_argument("--model", required=True, choices=cfgmod.MODELS)
    common(sub.add_parser("evaluate", help="metrics, summary table and figures"))
    sp = sub.add_parser("sweep", help="random-search hyperparameter sweep")
    common(sp)
    sp.add_argument("--model", action="append", choices=cfgmod.MODELS,
                    help="model to sweep (repeatable; default all)")
    sp.add_argument("--budget", type=int, help="points per model (overrides sweep.budget)")
    return p


def _resolve(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _progress(model, i, row):
    log.info("sweep %s point %d: psnr %.3f dB", model, i, row["psnr_db"])


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"cineflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        out = cfg.output_dir
        if args.command == "simulate":
            pipeline.simulate(cfg, out)
        elif args.command == "reconstruct":
            pipeline.reconstruct(cfg, out, args.model)
        elif args.command == "evaluate":
            reports = pipeline.evaluate(cfg, out)
            for m, r in reports.items():
                print(f"{m:9s} PSNR {r.mean_psnr:.2f} ± {r.std_psnr:.2f} dB  SSIM {r.mean_ssim:.4f} ± {r.std_ssim:.4f}")
        elif args.command == "sweep":
            if args.budget is not None and args.budget < 1:
                raise UsageError("--budget must be ≥ 1")
            models = tuple(args.model) if args.model else cfgmod.MODELS
            boards, _ = pipeline.sweep(cfg, out, models, args.budget, _progress)
            for m, b in boards.items():
                print(f"{m:9s} best PSNR {b[0]['psnr_db']:.2f} dB at point {b[0]['index']}")
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"cineflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except solver.DivergenceError as exc:
        print(f"cineflow: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (pipeline.MissingArtifactError, grid.GridError, mri.MaskError,
            simdata.NoDynamicsError, simdata.AdvectionError, OSError) as exc:
        print(f"cineflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
