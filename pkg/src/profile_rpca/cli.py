"""Command line entry point: ``profile-rpca {detect,synth-corpus,evaluate,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 stage or input failure.
Every config key can also be set through ``PROFILE_RPCA_<KEY>``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

from . import __version__, synth
from .evaluation import aggregate_report, evaluate_scores, write_report
from .geometry import FORMATS, EmptyInputError, PointCloudParseError, load_point_cloud
from .pipeline import ABLATION_GRID, ENV_PREFIX, ConfigError, StageError, detect, detect_cloud, load_config

log = logging.getLogger("profile_rpca")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args):
    overrides = _overrides(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


@contextlib.contextmanager
def _single_thread(enabled):
    # BLAS reductions are the only source of thread-dependent rounding here
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def cmd_detect(args):
    config = _config(args)
    with _single_thread(args.deterministic):
        for path in args.inputs:
            result = detect(path, config, args.out, args.format, args.input_format)
            line = f"{path}: coverage {result.report['coverage']:.3f}"
            if result.metrics:
                line += f", dice {result.metrics['dice']:.4f} at threshold {result.metrics['threshold']:.4g}"
            print(line)
    return EXIT_OK


def cmd_synth(args):
    records = synth.generate_corpus(args.out, args.preset, args.per_type, args.seed, args.points, args.format)
    print(f"wrote {len(records)} samples and manifest.csv to {args.out}")
    return EXIT_OK


def _score_file(runs, name):
    stem = os.path.splitext(os.path.basename(name))[0]
    for ext in FORMATS:
        cand = os.path.join(runs, f"{stem}.scores.{ext}")
        if os.path.exists(cand):
            return cand
    return None


def cmd_evaluate(args):
    manifest = synth.read_manifest(args.manifest)
    threshold = None if args.threshold is None else float(args.threshold)
    records = []
    for rec in manifest:
        path = _score_file(args.runs, rec["path"])
        if path is None:
            raise StageError("evaluate", f"no score file for {rec['path']} in {args.runs}")
        cloud = load_point_cloud(path)
        if cloud.scores is None or cloud.labels is None:
            raise StageError("evaluate", f"{path} lacks a score or label column")
        m = evaluate_scores(cloud.scores, cloud.labels, threshold)
        records.append(dict(m, part=rec["preset"], anomaly=rec["kind"], method=args.method))
    rows = aggregate_report(records)
    write_report(rows, args.out, os.path.splitext(args.out)[0] + ".json")
    for row in rows:
        print(f"{row['part']}/{row['anomaly']}/{row['method']}: dice {row['dice']:.4f} +- {row['dice_std']:.4f} (n={row['n']})")
    return EXIT_OK


def cmd_ablate(args):
    base = _config(args)
    records = []
    with _single_thread(args.deterministic):
        for path in args.inputs:
            cloud = load_point_cloud(path, args.input_format)
            part = cloud.meta.get("part", os.path.splitext(os.path.basename(path))[0])
            for name, opr, cs in ABLATION_GRID:
                result = detect_cloud(cloud, base.replace(enable_opr=opr, enable_cs=cs))
                if result.metrics is None:
                    raise StageError("ablate", f"{path} has no labelled anomaly points")
                records.append(dict(result.metrics, part=part, anomaly=args.anomaly, method=name))
                print(f"{path} {name:9s} dice {result.metrics['dice']:.4f}")
    rows = aggregate_report(records)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_report(rows, args.out, os.path.splitext(args.out)[0] + ".json")
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("--config", help="flat TOML file with PipelineConfig keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="seed for clustering initialisation")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numeric reductions")
    p.add_argument("--input-format", choices=FORMATS, help="input format (default: from extension)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="profile-rpca",
        description="Profile-matrix RPCA anomaly detection for axisymmetric parts.",
        epilog=f"Config keys may also be set with {ENV_PREFIX}<KEY> environment variables.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="score every point of one or more clouds")
    p.add_argument("inputs", nargs="+")
    _add_config_args(p)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=FORMATS, help="format of the scored cloud (default: input's)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth-corpus", help="write a labelled synthetic corpus")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), required=True)
    p.add_argument("--per-type", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="aggregate metrics of scored clouds listed in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--runs", required=True, help="directory holding <stem>.scores.* files")
    p.add_argument("--method", default="ours")
    p.add_argument("--threshold", help="fixed threshold (default: DICE-optimal per sample)")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the four-row CS/OPR ablation grid")
    p.add_argument("inputs", nargs="+")
    _add_config_args(p)
    p.add_argument("--anomaly", default="hole", help="anomaly label for the report rows")
    p.add_argument("--out", default="ablation.csv")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (PointCloudParseError, EmptyInputError, OSError) as exc:
        print(f"error: stage 'load' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
