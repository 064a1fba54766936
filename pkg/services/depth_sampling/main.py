"""Command-line entry point: normals, sample, synth, complete, eval, compare."""

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from services.common.logging import get_logger, log_error, setup_logging

from . import __version__
from .completion import (
    ComparisonTable,
    complete_idw,
    compute_metrics,
    evaluation_mask,
    merge_tables,
    run_comparison,
)
from .config import settings
from .exceptions import DepthSamplingError, FormatError, InfeasibleSampleError
from .geometry import backproject_map
from .io_formats import (
    parse_key_values,
    read_depth_png,
    read_intrinsics,
    read_scene_spec,
    write_comparison_csv,
    write_curvature_png,
    write_depth_png,
    write_float_grid,
    write_intrinsics,
    write_normal_map,
    write_normal_png,
    write_reliability_float,
    write_reliability_png,
    write_samples,
    write_sparse_png,
)
from .models import (
    CompletionConfig,
    DepthEncoding,
    DepthMap,
    EvaluationConfig,
    NeighborhoodConfig,
    NoiseModel,
    ReliabilityConfig,
    SamplerConfig,
    SamplingStrategy,
    SparseDepthMap,
)
from .normals import estimate_normal_map
from .sampler import sample_frame
from .synthetic import apply_noise, rendered_cloud

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3

STRATEGIES = {
    "geometry": SamplingStrategy.GEOMETRY_AWARE,
    "uniform": SamplingStrategy.UNIFORM,
}
TRUE_WORDS = {"1", "true", "yes", "on"}


# Argument types


def k_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"not a comma-separated int list: {text}"
        ) from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"k values must be >= 1: {text}")
    return values


def noise_triple(text: str) -> Tuple[float, float, float]:
    """``sigma0,gain,dropout_deg``."""
    try:
        sigma0, gain, dropout = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected sigma0,gain,dropout_deg: {text}"
        ) from None
    return sigma0, gain, dropout


def seed_value(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits: {text}")
    return value


class VersionAction(argparse.Action):
    """Print the version and the default parameter set, then exit."""

    def __init__(self, option_strings: Sequence[str], dest: str, **kwargs: Any):
        kwargs.setdefault("help", "print the version and default parameters")
        super().__init__(
            option_strings, dest, nargs=0, default=argparse.SUPPRESS, **kwargs
        )

    def __call__(
        self, parser: argparse.ArgumentParser, *args: Any, **kwargs: Any
    ) -> None:
        print(
            f"depth-sampling {__version__} "
            f"beta={settings.beta} window={settings.window} "
            f"radius={settings.radius} min_points={settings.min_points}"
        )
        parser.exit(EXIT_OK)


# Parser


def _add_neighborhood(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=int, default=settings.window)
    parser.add_argument("--radius", type=float, default=settings.radius)
    parser.add_argument("--min-points", type=int, default=settings.min_points)


def _add_reliability(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta", type=float, default=settings.beta)
    parser.add_argument(
        "--curvature-gate", action="store_true", default=settings.curvature_gate
    )
    parser.add_argument("--kappa-max", type=float, default=settings.kappa_max)


def _add_completion(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--power", type=float, default=settings.idw_power)
    parser.add_argument("--neighbors", type=int, default=settings.idw_neighbors)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depth-sampling",
        description="Geometry-aware sparse depth sampling and evaluation.",
    )
    parser.add_argument("--config", help="key-value file supplying flag defaults")
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--version", action=VersionAction)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--depth-scale", type=int, default=settings.depth_scale, help="units per meter"
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    normals = subparsers.add_parser(
        "normals", parents=[common], help="estimate a normal map"
    )
    normals.add_argument("--depth", required=True)
    normals.add_argument("--intrinsics", required=True)
    _add_neighborhood(normals)
    normals.add_argument("--out", required=True, help="normal-map binary")
    normals.add_argument("--curvature-out")
    normals.add_argument("--rgb-out")
    normals.set_defaults(handler=cmd_normals)

    sample = subparsers.add_parser("sample", parents=[common], help="draw k samples")
    sample.add_argument("--depth", required=True)
    sample.add_argument("--intrinsics", required=True)
    sample.add_argument("--k", type=int, required=True)
    sample.add_argument("--strategy", choices=sorted(STRATEGIES), default="geometry")
    sample.add_argument("--seed", type=seed_value, required=True)
    sample.add_argument("--out", required=True, help="sparse depth PNG")
    sample.add_argument("--reliability-out", help="8-bit reliability PNG")
    sample.add_argument("--reliability-float-out", help="float32 reliability grid")
    sample.add_argument("--samples-out")
    _add_neighborhood(sample)
    _add_reliability(sample)
    sample.set_defaults(handler=cmd_sample)

    synth = subparsers.add_parser("synth", parents=[common], help="render a scene")
    synth.add_argument("--scene", required=True)
    synth.add_argument("--seed", type=seed_value, required=True)
    synth.add_argument("--out-depth", required=True)
    synth.add_argument("--out-normals")
    synth.add_argument("--intrinsics-out")
    synth.add_argument("--noise", type=noise_triple)
    synth.add_argument("--error-out")
    synth.set_defaults(handler=cmd_synth)

    complete = subparsers.add_parser(
        "complete", parents=[common], help="densify a sparse depth map"
    )
    complete.add_argument("--sparse", required=True)
    complete.add_argument("--out", required=True)
    _add_completion(complete)
    complete.set_defaults(handler=cmd_complete)

    evaluate = subparsers.add_parser(
        "eval", parents=[common], help="MAE and RMSE of a prediction"
    )
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--max-depth", type=float)
    evaluate.add_argument("--crop", type=int, default=0)
    evaluate.add_argument("--out")
    evaluate.set_defaults(handler=cmd_eval)

    compare = subparsers.add_parser(
        "compare", parents=[common], help="geometry-aware vs uniform sampling"
    )
    source = compare.add_mutually_exclusive_group()
    source.add_argument("--gt")
    source.add_argument("--depth-dir")
    compare.add_argument("--intrinsics", required=True)
    compare.add_argument("--k-list", type=k_list, default="100,200,300,500")
    compare.add_argument("--seeds", type=int, required=True)
    compare.add_argument("--seed", type=seed_value, required=True, help="base seed")
    compare.add_argument("--noise", type=noise_triple)
    compare.add_argument("--max-depth", type=float)
    compare.add_argument("--crop", type=int, default=0)
    compare.add_argument("--out", required=True)
    _add_neighborhood(compare)
    _add_reliability(compare)
    _add_completion(compare)
    compare.set_defaults(handler=cmd_compare)

    return parser


def _subparsers(parser: argparse.ArgumentParser) -> Dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def apply_config(parser: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    """Use config-file values as flag defaults; the command line still wins."""
    known = set()
    for sub in [parser, *_subparsers(parser).values()]:
        for action in sub._actions:
            key = action.dest
            raw = values.get(key, values.get(key.replace("_", "-")))
            if raw is None or not action.option_strings:
                continue
            known.add(key)
            if isinstance(action, argparse._StoreTrueAction):
                action.default = raw.lower() in TRUE_WORDS
            else:
                action.default = raw
            action.required = False
    unknown = {k.replace("-", "_") for k in values} - known
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(sorted(unknown))}")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        apply_config(parser, parse_key_values(known.config))
    return parser.parse_args(argv)


# Commands


def _encoding(args: argparse.Namespace) -> DepthEncoding:
    return DepthEncoding(scale=args.depth_scale)


def _neighborhood(args: argparse.Namespace) -> NeighborhoodConfig:
    return NeighborhoodConfig(
        window=args.window, radius=args.radius, min_points=args.min_points
    )


def _reliability(args: argparse.Namespace) -> ReliabilityConfig:
    return ReliabilityConfig(
        beta=args.beta, curvature_gate=args.curvature_gate, kappa_max=args.kappa_max
    )


def _noise_model(noise: Tuple[float, float, float], seed: int) -> NoiseModel:
    sigma0, gain, dropout_deg = noise
    return NoiseModel(
        sigma0=sigma0,
        angle_gain=gain,
        dropout_angle=math.radians(dropout_deg),
        seed=seed,
    )


def cmd_normals(args: argparse.Namespace) -> int:
    intrinsics = read_intrinsics(args.intrinsics)
    depth = read_depth_png(args.depth, _encoding(args))
    cloud = backproject_map(depth, intrinsics)
    normal_map = estimate_normal_map(cloud, _neighborhood(args))
    write_normal_map(normal_map, args.out)
    if args.curvature_out:
        write_curvature_png(normal_map, args.curvature_out)
    if args.rgb_out:
        write_normal_png(normal_map, args.rgb_out)
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    intrinsics = read_intrinsics(args.intrinsics)
    enc = _encoding(args)
    depth = read_depth_png(args.depth, enc)
    scfg = SamplerConfig(k=args.k, seed=args.seed, strategy=STRATEGIES[args.strategy])
    result = sample_frame(
        depth, intrinsics, _neighborhood(args), _reliability(args), scfg
    )
    write_sparse_png(result.sparse, args.out, enc)
    if args.reliability_out or args.reliability_float_out:
        if result.reliability is None:
            logger.warning("Uniform strategy has no reliability map to write")
        else:
            if args.reliability_out:
                write_reliability_png(result.reliability, args.reliability_out)
            if args.reliability_float_out:
                write_reliability_float(result.reliability, args.reliability_float_out)
    if args.samples_out:
        write_samples(result.samples, args.samples_out)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = read_scene_spec(args.scene)
    depth, gt_normals, cloud = rendered_cloud(spec)
    out = depth
    if args.noise is not None:
        out, error = apply_noise(
            depth, gt_normals, cloud, _noise_model(args.noise, args.seed)
        )
        if args.error_out:
            write_float_grid(error, args.error_out)
    elif args.error_out:
        write_float_grid(np.zeros(depth.shape), args.error_out)
    write_depth_png(out, args.out_depth, _encoding(args))
    if args.out_normals:
        write_normal_map(gt_normals, args.out_normals)
    if args.intrinsics_out:
        write_intrinsics(spec.intrinsics, args.intrinsics_out)
    return EXIT_OK


def cmd_complete(args: argparse.Namespace) -> int:
    enc = _encoding(args)
    sparse = SparseDepthMap(values=read_depth_png(args.sparse, enc).values)
    ccfg = CompletionConfig(power=args.power, neighbors=args.neighbors)
    dense = complete_idw(sparse, ccfg)
    write_depth_png(dense, args.out, enc)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    enc = _encoding(args)
    pred = read_depth_png(args.pred, enc)
    gt = read_depth_png(args.gt, enc)
    ecfg = EvaluationConfig(max_depth=args.max_depth, crop=args.crop)
    mask = evaluation_mask(gt, ecfg)
    report = compute_metrics(pred, gt, mask)
    line = json.dumps(report.model_dump(), sort_keys=True)
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    return EXIT_OK


def _frames(args: argparse.Namespace) -> List[Path]:
    if args.depth_dir:
        paths = sorted(Path(args.depth_dir).glob("*.png"))
        if not paths:
            raise FileNotFoundError(f"no *.png frames in {args.depth_dir}")
        return paths
    if not args.gt:
        raise FormatError("compare needs --gt or --depth-dir")
    return [Path(args.gt)]


def cmd_compare(args: argparse.Namespace) -> int:
    intrinsics = read_intrinsics(args.intrinsics)
    enc = _encoding(args)
    ncfg = _neighborhood(args)
    rcfg = _reliability(args)
    ccfg = CompletionConfig(power=args.power, neighbors=args.neighbors)
    ecfg = EvaluationConfig(max_depth=args.max_depth, crop=args.crop)

    tables: List[ComparisonTable] = []
    for path in _frames(args):
        gt = read_depth_png(path, enc)
        noisy: Optional[DepthMap] = None
        if args.noise is not None:
            cloud = backproject_map(gt, intrinsics)
            gt_normals = estimate_normal_map(cloud, ncfg)
            noisy, _ = apply_noise(
                gt, gt_normals, cloud, _noise_model(args.noise, args.seed)
            )
        tables.append(
            run_comparison(
                gt,
                intrinsics,
                args.k_list,
                args.seeds,
                noisy=noisy,
                ncfg=ncfg,
                rcfg=rcfg,
                ccfg=ccfg,
                ecfg=ecfg,
                base_seed=args.seed,
            )
        )
        logger.info("Frame compared", frame=str(path))

    table = tables[0] if len(tables) == 1 else merge_tables(tables)
    write_comparison_csv(table, args.out)
    return EXIT_OK


def _one_line(error: BaseException) -> str:
    return " ".join(str(error).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = parse_args(argv)
    except (DepthSamplingError, OSError) as e:
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_INPUT

    setup_logging(args.log_level, settings.log_format)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except InfeasibleSampleError as e:
        log_error(logger, e, {"command": args.command})
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DepthSamplingError, OSError, ValidationError) as e:
        log_error(logger, e, {"command": args.command})
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
