"""Command line entry points for the pipeline stages.

Every subcommand drives the same resumable pipeline off a YAML experiment
config; parent stages run automatically when their outputs are missing and
are skipped when the run ledger already has them.  Exit codes: 0 success,
1 fatal error, 2 partial results.
"""

from __future__ import annotations

import argparse
import sys

from cdga.config import ConfigError, load_config
from cdga.pipeline import Pipeline, PipelineError, STAGES


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config YAML")
    parser.add_argument("--out", help="override the output root directory")
    parser.add_argument("--seed", type=int, help="override the experiment seed")
    parser.add_argument(
        "--resume",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="keep partial generation progress (default); --no-resume starts fresh",
    )
    parser.add_argument(
        "--stub-backend",
        action="store_true",
        help="replace the configured backend with the deterministic stub",
    )
    parser.add_argument(
        "--backend",
        help="override the generation backend kind (e.g. stub, pixel_blend, remote)",
    )
    parser.add_argument("--workers", type=int, help="override generation worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdga",
        description="Cross-domain generative augmentation: generate, benchmark, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "scan": "index a dataset tree into a manifest",
        "generate": "plan and execute synthetic image generation",
        "benchmark": "train and evaluate under the domain generalization protocol",
        "diagnose": "compute domain-shift diagnostics and plots",
        "report": "assemble a summary of all artifacts",
    }
    for stage in STAGES:
        _add_common(sub.add_parser(stage, help=helps[stage]))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.out:
        overrides["out_root"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_config(args.config, **overrides)
        backend_kind = "stub" if args.stub_backend else args.backend
        if backend_kind:
            if config.backend["kind"] != backend_kind:
                config.backend["params"] = {}
            config.backend["kind"] = backend_kind
        if args.workers is not None:
            config.backend["workers"] = args.workers
        pipeline = Pipeline(config, resume=args.resume)
        code, outcomes = pipeline.run([args.command])
    except (ConfigError, PipelineError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for outcome in outcomes:
        detail = ""
        if outcome.details.get("missing"):
            detail = f" missing={outcome.details['missing']}"
        if outcome.details.get("failed_targets"):
            detail = f" failed_targets={outcome.details['failed_targets']}"
        print(f"[{outcome.stage}] {outcome.status}{detail}")
    return code


if __name__ == "__main__":
    sys.exit(main())
