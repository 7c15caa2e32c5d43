"""Command line entry point: ``python -m surepsf <command> ...``.

Commands
--------
estimate      estimate a PSF and lambda on one image
simulate      Monte-Carlo batches (convergence histogram, accuracy scatter)
lambda-check  fixed-point lambda against a brute-force grid of SURE values
tile          patch-wise estimation and stitched deconvolution

Every flag can also come from a JSON file given with ``--config``; keys are
the long flag names with dashes or underscores.  Flags on the command line
override the file, unknown keys are rejected.

Exit codes: 0 success (a DIVERGED run is a result, not a failure),
2 usage or configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import OptimizerConfig, estimate, lambda_solve
from .exceptions import (
    DimensionMismatchError,
    InvalidInputError,
    ParameterDomainError,
    SurePsfError,
)
from .imageio import read_image, write_csv, write_image, write_json
from .psf import psf_from_dict
from .regularizer import RegularizerSpec
from .sim import (
    HISTOGRAM_HEADER,
    TrialSpec,
    grid_search_lambda,
    histogram_rows,
    lambda_grid,
    make_observation,
    random_specs,
    read_manifest,
    run_batch,
    run_laplacian_comparison,
    write_comparison,
    write_manifest,
)
from .spectral import inverse_dft
from .sure import SureContext, wiener_solve
from .tiler import deconvolve_tiled, estimate_tiled, fill_models, luminosity, plan_tiles

__all__ = ["main", "build_parser", "UsageError", "EXIT_USAGE", "EXIT_IO", "EXIT_NUMERIC"]

log = logging.getLogger("surepsf")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DEFAULT_INIT = {
    "gaussian": "omega_x=2,omega_y=2,theta_deg=0",
    "laplacian": "alpha_x=2,alpha_y=2,theta_deg=0",
}


class UsageError(Exception):
    """Bad flag combination or configuration file content."""


class ImageReadError(Exception):
    """Input image exists but cannot be decoded."""


def _read(path):
    try:
        return read_image(path)
    except (ValueError, SyntaxError) as exc:  # Pillow raises both on bad files
        raise ImageReadError(f"{path}: {exc}") from exc


# ------------------------------------------------------------------ parsing


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _params(text):
    """``"omega_x=3,omega_y=1,theta_deg=25"`` -> dict of floats."""
    out = {}
    for item in str(text).split(","):
        if not item.strip():
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad number in {item!r}") from None
    return out


def _add_noise(p, required):
    g = p.add_mutually_exclusive_group(required=False)
    g.add_argument("--sigma", type=float, help="noise standard deviation")
    g.add_argument(
        "--snr",
        type=float,
        help="signal-to-noise ratio, mean(image)/sigma" + ("" if required else "; see command help"),
    )


def _add_optimizer(p):
    g = p.add_argument_group("optimizer")
    g.add_argument("--p", type=float, help="fixed-point exponent (default: family default)")
    g.add_argument("--p-ramp-iters", type=int, help="iterations over which p ramps up (default 10)")
    g.add_argument("--theta-rule", choices=["spectral", "fixed"], help="angle step rule")
    g.add_argument("--theta-step", type=float, help="angle step for --theta-rule fixed")
    g.add_argument("--max-iters", type=int, help="iteration budget (default 200)")
    g.add_argument("--conv-tol", type=float, help="convergence tolerance (default 1e-3)")
    g.add_argument("--conv-window", type=int, help="consecutive calm iterations (default 3)")


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--out", type=Path, help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surepsf",
        description="Blind PSF estimation by SURE minimization.",
        epilog="Exit codes: 0 ok (including DIVERGED), 2 usage, 3 I/O, 4 numerical.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    kw = {"argument_default": argparse.SUPPRESS}

    p = sub.add_parser("estimate", help="estimate PSF parameters and lambda on one image", **kw)
    _add_common(p)
    p.add_argument("--input", help="input image (PGM/PPM, or PNG with Pillow)")
    p.add_argument("--family", choices=["gaussian", "laplacian"], help="PSF family")
    p.add_argument("--init", type=_params, help="initial parameters, e.g. omega_x=2,omega_y=2,theta_deg=0")
    _add_noise(p, True)
    p.add_argument("--lambda0", type=float, help="initial lambda (default 1e-2)")
    p.add_argument("--reg-order", type=float, help="finite-difference order r (default 1)")
    p.add_argument("--deconvolved", help="also write the deconvolved image to this file name")
    _add_optimizer(p)

    p = sub.add_parser("simulate", help="run a Monte-Carlo batch", **kw)
    _add_common(p)
    p.add_argument("--family", choices=["gaussian", "laplacian"], help="PSF family of the trials")
    p.add_argument("--trials", type=int, help="number of trials (default 100)")
    p.add_argument("--p", type=_floats, help="comma-separated exponents to sweep")
    p.add_argument("--seed", type=int, help="seed of the first trial (default 0)")
    p.add_argument("--snr", type=float, help="fixed SNR (default: log-uniform prior on [20, 200])")
    p.add_argument("--image", help="test image: astronaut, dead_leaves or a file path")
    p.add_argument("--max-iters", type=int, help="iteration budget per run (default 500)")
    p.add_argument("--theta-rule", choices=["spectral", "fixed"], help="angle step rule")
    p.add_argument("--reg-order", type=float, help="finite-difference order r (default 1)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--compare-ideal", action="store_true", help="paired pragmatic vs ideal (laplacian)")
    p.add_argument("--manifest", type=Path, help="rerun exactly the trials of a manifest.json")
    p.add_argument("--no-grid-lambda", action="store_true", help="skip the brute-force lambda grid")

    p = sub.add_parser("lambda-check", help="fixed-point lambda against a SURE grid", **kw)
    _add_common(p)
    p.add_argument("--input", help="input image; omit to simulate from --seed/--snr/--image")
    p.add_argument("--psf", type=_params, help="PSF parameters, e.g. omega_x=3,omega_y=1,theta_deg=25")
    p.add_argument("--family", choices=["gaussian", "laplacian"], help="PSF family")
    _add_noise(p, False)
    p.add_argument("--seed", type=int, help="seed of the simulated problem (default 0)")
    p.add_argument("--image", help="test image for the simulated problem (default astronaut)")
    p.add_argument("--lambda0", type=float, help="initial lambda (default 1e-2)")
    p.add_argument("--reg-order", type=float, help="finite-difference order r (default 1)")
    p.add_argument("--grid-min", type=float, help="smallest grid lambda (default 1e-6)")
    p.add_argument("--grid-max", type=float, help="largest grid lambda (default 1e2)")
    p.add_argument("--grid-points", type=int, help="log-spaced grid points (default 64)")

    p = sub.add_parser("tile", help="patch-wise estimation and stitched deconvolution", **kw)
    _add_common(p)
    p.add_argument("--input", help="input image (gray or RGB)")
    p.add_argument("--family", choices=["gaussian", "laplacian"], help="PSF family")
    _add_noise(p, False)
    p.add_argument("--patch", type=int, help="patch size in pixels, even (default 256)")
    p.add_argument("--overlap", type=float, help="overlap fraction in [0, 1) (default 0.25)")
    p.add_argument("--boundary", choices=["smooth", "periodic"], help="patch boundary handling")
    p.add_argument("--lambda0", type=float, help="initial lambda (default 1e-2)")
    p.add_argument("--reg-order", type=float, help="finite-difference order r (default 1)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--format", choices=["pgm", "png"], help="output image format (default pgm)")
    _add_optimizer(p)
    return parser


DEFAULTS = {
    "common": {"out": Path("."), "verbose": False},
    "estimate": {
        "family": "gaussian",
        "lambda0": 1e-2,
        "reg_order": 1.0,
        "deconvolved": None,
    },
    "simulate": {
        "family": "gaussian",
        "trials": 100,
        "p": None,
        "seed": 0,
        "snr": None,
        "image": "astronaut",
        "max_iters": 500,
        "theta_rule": "spectral",
        "reg_order": 1.0,
        "jobs": 1,
        "compare_ideal": False,
        "manifest": None,
        "no_grid_lambda": False,
    },
    "lambda-check": {
        "input": None,
        "family": "gaussian",
        "psf": None,
        "seed": 0,
        "image": "astronaut",
        "lambda0": 1e-2,
        "reg_order": 1.0,
        "grid_min": 1e-6,
        "grid_max": 1e2,
        "grid_points": 64,
    },
    "tile": {
        "family": "gaussian",
        "patch": 256,
        "overlap": 0.25,
        "boundary": "smooth",
        "lambda0": 1e-2,
        "reg_order": 1.0,
        "jobs": 1,
        "format": "pgm",
    },
}

OPTIMIZER_KEYS = ("p", "p_ramp_iters", "theta_rule", "theta_step", "max_iters", "conv_tol", "conv_window")
PATH_KEYS = ("out", "manifest")


def _flag_keys(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[command]
    return {a.dest for a in sp._actions if a.dest not in ("help", "config")}, sp


def _load_config(path, allowed, sp):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    out = {}
    for key, val in data.items():
        dest = key.replace("-", "_")
        if dest not in allowed:
            raise UsageError(f"unknown config key {key!r}")
        action = next(a for a in sp._actions if a.dest == dest)
        if action.type is not None and isinstance(val, str):
            try:
                val = action.type(val)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        if dest in ("p",) and isinstance(val, (int, float)) and action.type is _floats:
            val = [float(val)]
        if dest in PATH_KEYS and val is not None:
            val = Path(val)
        out[dest] = val
    return out


def resolve(argv=None):
    """Parse ``argv`` and merge defaults, config file and flags (in that order)."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    command = ns.command
    allowed, sp = _flag_keys(parser, command)
    cfg = {**DEFAULTS["common"], **DEFAULTS[command]}
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None) is not None:
        cfg.update(_load_config(ns.config, allowed, sp))
    cfg.update(flags)
    cfg["command"] = command
    return cfg


def _optimizer_config(cfg, default_iters=None):
    kw = {k: cfg[k] for k in OPTIMIZER_KEYS if cfg.get(k) is not None}
    if default_iters is not None:
        kw.setdefault("max_iters", default_iters)
    try:
        return OptimizerConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _sigma(cfg, img, required=True):
    if cfg.get("sigma") is not None:
        if not cfg["sigma"] > 0:
            raise UsageError("--sigma must be > 0")
        return float(cfg["sigma"])
    if cfg.get("snr") is not None:
        if not cfg["snr"] > 0:
            raise UsageError("--snr must be > 0")
        return float(np.mean(img)) / float(cfg["snr"])
    if required:
        raise UsageError("one of --sigma or --snr is required")
    return None


def _require(cfg, key):
    if cfg.get(key) in (None, ""):
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _gray(img):
    return luminosity(img[..., 0], img[..., 1], img[..., 2]) if img.ndim == 3 else img


def _model(family, params):
    try:
        return psf_from_dict({"family": family, **params})
    except (TypeError, KeyError) as exc:
        raise UsageError(f"bad {family} parameters {params}: {exc}") from None


# ----------------------------------------------------------------- commands


def cmd_estimate(cfg) -> int:
    path = _require(cfg, "input")
    img = _read(path)
    gray = _gray(img)
    sigma = _sigma(cfg, gray)
    ocfg = _optimizer_config(cfg)
    model0 = _model(cfg["family"], cfg.get("init") or _params(DEFAULT_INIT[cfg["family"]]))
    ctx = SureContext.from_image(gray, sigma**2, RegularizerSpec(cfg["reg_order"]))
    model, lam, trace = estimate(ctx, model0, cfg["lambda0"], ocfg)
    out = Path(cfg["out"])
    result = {
        "input": str(path),
        "model": model.to_dict(),
        "lambda": lam,
        "status": trace.status.value,
        "iterations": trace.iterations,
        "reason": trace.reason,
        "sure": float(trace.sure[-1]) if trace.rows else None,
        "sigma": sigma,
        "reg_order": cfg["reg_order"],
    }
    write_json(out / "params.json", result)
    trace.to_csv(out / "trace.csv")
    log.info("%s after %d iterations: %s, lambda=%.4g", trace.status.value, trace.iterations, model.to_dict(), lam)
    if cfg.get("deconvolved"):
        channels = [img[..., c] for c in range(3)] if img.ndim == 3 else [img]
        h = model.spectrum(gray.shape)
        planes = []
        for ch in channels:
            c = SureContext.from_image(ch, sigma**2, RegularizerSpec(cfg["reg_order"]))
            planes.append(inverse_dft(wiener_solve(c, h, lam)))
        write_image(out / cfg["deconvolved"], np.stack(planes, axis=-1) if img.ndim == 3 else planes[0])
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    out = Path(cfg["out"])
    if cfg.get("manifest"):
        specs = read_manifest(cfg["manifest"])
    else:
        if not cfg["trials"] or cfg["trials"] < 1:
            raise UsageError("--trials must be >= 1")
        p_values = tuple(cfg["p"] or ())
        specs = random_specs(
            cfg["trials"],
            family=cfg["family"],
            seed=cfg["seed"],
            p_values=p_values,
            snr=cfg["snr"],
            image=cfg["image"],
            max_iters=cfg["max_iters"],
            theta_rule=cfg["theta_rule"],
            reg_order=cfg["reg_order"],
            grid_lambda=not cfg["no_grid_lambda"],
        )
    if cfg["compare_ideal"]:
        if any(s.family != "laplacian" for s in specs):
            raise UsageError("--compare-ideal needs --family laplacian")
        pairs = run_laplacian_comparison(specs, jobs=cfg["jobs"])
        write_comparison(out / "comparison.csv", pairs)
        write_manifest(out / "manifest.json", specs)
        log.info("wrote %d paired trials to %s", len(pairs), out)
        return EXIT_OK
    batch = run_batch(specs, jobs=cfg["jobs"])
    batch.write(out)
    for row in histogram_rows(batch.records):
        log.info("p=%g: %s", row[0], dict(zip(HISTOGRAM_HEADER[2:], row[2:])))
    return EXIT_OK


def cmd_lambda_check(cfg) -> int:
    family = cfg["family"]
    if cfg["grid_points"] < 1 or not (0 < cfg["grid_min"] <= cfg["grid_max"]):
        raise UsageError("grid needs grid-points >= 1 and 0 < grid-min <= grid-max")
    if cfg.get("input"):
        gray = _gray(_read(cfg["input"]))
        sigma = _sigma(cfg, gray)
        model = _model(family, _require(cfg, "psf"))
    else:
        truth = cfg.get("psf") or _params("omega_x=3,omega_y=1,theta_deg=25")
        snr = cfg.get("snr") if cfg.get("snr") is not None else 60.0
        spec = TrialSpec(seed=cfg["seed"], family=family, truth=truth, snr=snr, image=cfg["image"])
        gray, _, model, sigma, _ = make_observation(spec)
        if cfg.get("sigma") is not None:
            raise UsageError("--sigma applies only with --input")
    ctx = SureContext.from_image(gray, sigma**2, RegularizerSpec(cfg["reg_order"]))
    h = model.spectrum(ctx.shape)
    fp = lambda_solve(ctx, h, cfg["lambda0"])
    grid = lambda_grid(cfg["grid_min"], cfg["grid_max"], cfg["grid_points"])
    best, grid, values = grid_search_lambda(ctx, h, grid)
    if len(grid) < 2 or grid[-1] == grid[0]:
        log.warning("degenerate lambda grid (%d point); agreement is not meaningful", len(grid))
        cell = float("nan")
        agree = False
    else:
        cell = math.log(grid[1] / grid[0])
        agree = abs(math.log(fp.lam / best)) <= cell * (1 + 1e-9)
    out = Path(cfg["out"])
    write_csv(out / "lambda_grid.csv", ["lambda", "sure"], [[float(a), float(b)] for a, b in zip(grid, values)])
    write_json(
        out / "lambda_check.json",
        {
            "model": model.to_dict(),
            "sigma": sigma,
            "lambda_fixed_point": fp.lam,
            "fixed_point_converged": fp.converged,
            "fixed_point_iterations": fp.iterations,
            "lambda_grid_argmin": best,
            "log_cell_width": cell,
            "agree": agree,
        },
    )
    log.info("fixed point %.4g, grid argmin %.4g, agree=%s", fp.lam, best, agree)
    return EXIT_OK


def cmd_tile(cfg) -> int:
    path = _require(cfg, "input")
    img = _read(path)
    gray = _gray(img)
    sigma = _sigma(cfg, gray, required=False)
    ocfg = _optimizer_config(cfg)
    layout = plan_tiles(*gray.shape, patch=cfg["patch"], overlap=cfg["overlap"])
    if len(layout) == 1:
        log.warning("patch %s covers the whole %s image; using a single patch", layout.patch_shape, gray.shape)
    stats = estimate_tiled(
        gray,
        family=cfg["family"],
        cfg=ocfg,
        sigma=sigma,
        patch=cfg["patch"],
        overlap=cfg["overlap"],
        lambda0=cfg["lambda0"],
        reg_order=cfg["reg_order"],
        jobs=cfg["jobs"],
        boundary=cfg["boundary"],
    )
    out = Path(cfg["out"])
    write_json(out / "patch_stats.json", stats.to_dict())
    write_csv(out / "patch_stats.csv", ["parameter", "mean", "std", "converged"], stats.csv_rows())
    models = fill_models(stats.layout, stats.records)
    ms, lams = [m for m, _ in models], [lam for _, lam in models]
    channels = [img[..., c] for c in range(3)] if img.ndim == 3 else [img]
    planes = [
        deconvolve_tiled(ch, stats.layout, ms, lams, cfg["reg_order"], cfg["boundary"]) for ch in channels
    ]
    result = np.stack(planes, axis=-1) if img.ndim == 3 else planes[0]
    ext = ".png" if cfg["format"] == "png" else (".ppm" if img.ndim == 3 else ".pgm")
    write_image(out / f"deconvolved{ext}", result)
    log.info("%d/%d patches converged; mean %s", stats.count, len(stats.records), stats.mean)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "lambda-check": cmd_lambda_check,
    "tile": cmd_tile,
}


def main(argv=None) -> int:
    try:
        cfg = resolve(argv)
    except SystemExit as exc:  # argparse: --help / --version exit 0, errors exit 2
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"surepsf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"surepsf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(
        level=logging.INFO if cfg["verbose"] else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[cfg["command"]](cfg)
    except Exception as exc:  # map to the documented exit codes
        code, label = _classify(exc)
        print(f"surepsf: {label}: {exc}", file=sys.stderr)
        return code


def _classify(exc):
    if isinstance(exc, (UsageError, InvalidInputError, ParameterDomainError, DimensionMismatchError)):
        return EXIT_USAGE, "error"
    if isinstance(exc, (OSError, ImageReadError)):
        return EXIT_IO, "I/O error"
    if isinstance(exc, (SurePsfError, ArithmeticError)):
        return EXIT_NUMERIC, "numerical failure"
    raise exc


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
