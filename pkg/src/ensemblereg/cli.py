"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data, format or convergence error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import fileio, interpret, rwir, scenarios
from .core import DisplacementSet, Image, ScalarField
from .errors import EnsembleRegError

log = logging.getLogger("ensemblereg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


def _levels(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--fixed", type=Path, help="fixed image (PGM)")
    common.add_argument("--moving", type=Path, help="moving image (PGM)")
    common.add_argument("--labels", type=Path, help="label image for the moving image (PGM)")
    common.add_argument("--posterior", type=Path, help="posterior CSV written by `register`")
    common.add_argument("--displacements", type=Path,
                        help="displacement CSV; defaults to the --grid-radius grid")
    common.add_argument("--ensemble", type=Path, help="scalar ensemble CSV written by `push`")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--grid-radius", type=int, default=5)
    common.add_argument("--patch-radius", type=int, default=rwir.RwirConfig.patch_radius)
    common.add_argument("--sigma", type=float, default=rwir.RwirConfig.sigma)
    common.add_argument("--gamma", type=float, default=rwir.RwirConfig.gamma)
    common.add_argument("--beta-g", type=float, default=rwir.RwirConfig.beta_g)
    common.add_argument("--threshold", type=float)
    common.add_argument("--levels", type=_levels, default=ens.DEFAULT_LEVELS,
                        help="comma-separated contour levels (default 0.05,0.5,0.95)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ensemblereg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("register", parents=[common], help="fixed + moving -> posterior CSV and mode-warped PGM")
    sub.add_parser("stats", parents=[common], help="posterior -> summary-statistic maps")
    sub.add_parser("push", parents=[common], help="posterior + moving [+ labels] -> ensemble fields")
    sub.add_parser("contour", parents=[common], help="scalar ensemble -> exceedance contours")
    sc = sub.add_parser("scenario", parents=[common], help="run a built-in scenario")
    sc.add_argument("name", choices=sorted(scenarios.SCENARIOS))
    return parser


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"ensemblereg {args.command}: missing required option(s): {', '.join(missing)}")


def _config(args) -> rwir.RwirConfig:
    return rwir.RwirConfig(patch_radius=args.patch_radius, sigma=args.sigma,
                           gamma=args.gamma, beta_g=args.beta_g)


def _displacements(args) -> DisplacementSet:
    if args.displacements is not None:
        return fileio.read_displacements_csv(args.displacements)
    return DisplacementSet.grid(args.grid_radius)


def _colormap(smap, path):
    hi = float(smap.values.max())
    fileio.write_colormap(smap, path, 0.0, hi if hi > 0 else 1.0)


def _commit(out: Path, outputs):
    """Write ``(name, writer)`` pairs once every output has been computed."""
    out.mkdir(parents=True, exist_ok=True)
    for name, write in outputs:
        write(out / name)
        log.info("wrote %s", out / name)


def cmd_register(args):
    _require(args, "fixed", "moving", "out")
    try:
        cfg = _config(args)
    except EnsembleRegError as exc:
        raise UsageError(str(exc))
    fixed, moving = fileio.read_image(args.fixed), fileio.read_image(args.moving)
    disps = DisplacementSet.grid(args.grid_radius)
    post = rwir.register(fixed, moving, disps, cfg)
    registered = interpret.warp_by_mode(moving, interpret.mode_transformation(post, disps))
    posterior_csv = fileio.encode_csv_field(post)
    _commit(args.out, [
        ("posterior.csv", lambda p: fileio.atomic_write(p, posterior_csv)),
        ("displacements.csv", lambda p: fileio.write_displacements_csv(disps, p)),
        ("registered.pgm", lambda p: fileio.write_image(registered, p)),
    ])


def _load_posterior(args):
    post = fileio.read_posterior_csv(args.posterior)
    disps = _displacements(args)
    if disps.K != post.K:
        raise EnsembleRegError(f"posterior has K={post.K} but the displacement set has {disps.K}")
    return post, disps


def cmd_stats(args):
    _require(args, "posterior", "out")
    post, disps = _load_posterior(args)
    _, cov = interpret.displacement_moments(post, disps)
    iqr = interpret.displacement_iqr_map(post, disps)
    maps = {
        "entropy": interpret.entropy_map(post),
        "variance_x": ScalarField(cov[:, :, 0, 0]),
        "variance_y": ScalarField(cov[:, :, 1, 1]),
        "iqr_x": ScalarField(iqr[:, :, 0]),
        "iqr_y": ScalarField(iqr[:, :, 1]),
        "frobenius": interpret.covariance_frobenius_map(post, disps),
    }
    outputs = []
    for name, smap in maps.items():
        outputs.append((f"{name}.csv", lambda p, m=smap: fileio.write_csv_field(m, p)))
        outputs.append((f"{name}.ppm", lambda p, m=smap: _colormap(m, p)))
    _commit(args.out, outputs)


def cmd_push(args):
    _require(args, "posterior", "moving", "out")
    post, disps = _load_posterior(args)
    moving = fileio.read_image(args.moving)
    field_ = ens.pushforward_scalar(post, disps, moving)
    variance = ens.ensemble_variance_map(field_)
    mode_img = Image(ens.ensemble_mode(field_))
    mismatch = ens.mode_mismatch_map(post, disps, moving)
    outputs = [
        ("ensemble.csv", lambda p: fileio.write_csv_field(field_, p)),
        ("variance.csv", lambda p: fileio.write_csv_field(variance, p)),
        ("variance.ppm", lambda p: _colormap(variance, p)),
        ("mode.pgm", lambda p: fileio.write_image(mode_img, p)),
        ("mismatch.csv", lambda p: fileio.write_csv_field(mismatch, p)),
        ("mismatch.pgm", lambda p: fileio.write_image(Image(255.0 * mismatch.values), p)),
    ]
    if args.labels is not None:
        labels = fileio.read_image(args.labels)
        label_field = ens.pushforward_label(post, disps, labels)
        outputs.append(("label_ensemble.csv", lambda p: fileio.write_csv_field(label_field, p)))
        for lab in np.unique(labels.pixels).astype(np.int64):
            if lab == 0:
                continue
            prob = ens.label_probability_map(label_field, int(lab))
            outputs.append((f"label_probability_{lab}.csv", lambda p, m=prob: fileio.write_csv_field(m, p)))
            outputs.append((f"label_probability_{lab}.ppm",
                            lambda p, m=prob: fileio.write_colormap(m, p, 0.0, 1.0)))
    _commit(args.out, outputs)


def cmd_contour(args):
    _require(args, "ensemble", "threshold", "out")
    field_ = fileio.read_ensemble_csv(args.ensemble)
    exceed = ens.exceedance_map(field_, args.threshold)
    contours = [ens.iso_contours(exceed, lv) for lv in args.levels]
    rgb = scenarios.overlay_rgb(exceed, contours)
    _commit(args.out, [
        ("exceedance.csv", lambda p: fileio.write_csv_field(exceed, p)),
        ("contours.csv", lambda p: scenarios.write_contours_csv(contours, p)),
        ("overlay.ppm", lambda p: fileio.atomic_write(p, fileio.encode_ppm(rgb))),
    ])
    for cs in contours:
        print(f"level {cs.level:g}: {len(cs)} contour(s), {sum(cs.closed)} closed")


def cmd_scenario(args):
    report = scenarios.run_scenario(args.name, args.out, seed=args.seed)
    print("metric,value")
    for k, v in report.metrics.items():
        print(f"{k},{fileio.fmt_real(v)}")


COMMANDS = {
    "register": cmd_register,
    "stats": cmd_stats,
    "push": cmd_push,
    "contour": cmd_contour,
    "scenario": cmd_scenario,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (EnsembleRegError, OSError) as exc:
        print(f"ensemblereg: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
