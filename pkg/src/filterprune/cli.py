"""Command-line entry point: ``filterprune <subcommand> ...``.

Every subcommand exits 0 on success. Failures print one JSON line
``{"error": <type>, "message": <text>}`` to stderr and exit 1 (2 for usage
errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .accounting import cost_report
from .data.manifest import DatasetManifest
from .data.synth import GeneratorConfig, generate_dataset
from .exceptions import ConfigurationError, FilterPruneError, FormatError
from .harness.config import ExperimentConfig
from .harness.experiment import run_experiment
from .harness.report import MetricsReport, emit_report
from .harness.threshold import threshold_baseline
from .harness.training import evaluate
from .models import build_resnet, load_checkpoint
from .models.checkpoint import MAGIC



class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, code=2)


def _fail(kind: str, message: str, code: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _out(data: bytes) -> None:
    sys.stdout.buffer.write(data)
    sys.stdout.flush()


def _dump_json(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _load_experiment(path, seed, out) -> ExperimentConfig:
    config = ExperimentConfig.load(path)
    if seed is not None:
        config.seed = seed
    if out is not None:
        config.output_dir = out
    dataset = Path(config.dataset)
    if not dataset.is_absolute():
        config.dataset = str(Path(path).resolve().parent / dataset)
    return config


def _run(config: ExperimentConfig, args) -> bytes:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config, results_dir=out, n_jobs=args.jobs,
                            save_checkpoints=not args.no_checkpoints, resume=args.resume)
    (out / "report.json").write_bytes(emit_report(report, "json"))
    (out / "report.txt").write_bytes(emit_report(report, "table"))
    return emit_report(report, args.format)


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> None:
    text = Path(args.config).read_text(encoding="utf-8")
    try:
        config = GeneratorConfig.from_json(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    manifest = generate_dataset(config, args.out_dir, seed=args.seed or 0)
    _out(_dump_json({"out_dir": str(args.out_dir), "records": len(manifest), "counts": manifest.counts()}))


def cmd_train(args) -> None:
    config = _load_experiment(args.config, args.seed, args.out)
    config.pruning.method = "none"
    _out(_run(config, args))


def cmd_prune(args) -> None:
    config = _load_experiment(args.config, args.seed, args.out)
    config.pruning.method = args.method
    _out(_run(config, args))


def cmd_eval(args) -> None:
    model = load_checkpoint(Path(args.checkpoint).read_bytes())
    manifest = DatasetManifest.read(args.manifest)
    _out(_dump_json(evaluate(model, manifest).to_dict()))


def cmd_count(args) -> None:
    path = Path(args.source)
    payload = path.read_bytes()
    if payload.startswith(MAGIC):
        model = load_checkpoint(payload)
    else:
        config = ExperimentConfig.from_json(payload.decode("utf-8"))
        arch = config.architecture
        model = build_resnet(arch.depth, arch.width_scale, arch.input_shape, arch.num_classes,
                             seed=config.seed if args.seed is None else args.seed)
    report = cost_report(model)
    _out(report.to_table(per_layer=args.per_layer).encode("utf-8") if args.format == "table" else _dump_json(report.to_dict()))


def cmd_baseline(args) -> None:
    manifest = DatasetManifest.read(args.manifest)
    images, labels = manifest.load_images(), manifest.labels
    thresholds = args.thresholds or None
    results = [threshold_baseline(images, labels, w, thresholds) for w in args.windows]
    best = max(results, key=lambda r: r.best_accuracy)
    _out(_dump_json({
        "windows": [r.to_dict() for r in results],
        "best": {"window": best.window, "threshold": best.best_threshold, "accuracy": best.best_accuracy},
    }))


def cmd_report(args) -> None:
    root = Path(args.results_dir)
    if not root.is_dir():
        raise ConfigurationError(f"{root} is not a directory")
    paths = sorted(root.rglob("report.json"))
    if not paths:
        raise FormatError(f"no report.json found under {root}")
    reports = [MetricsReport.from_json(p.read_text(encoding="utf-8")) for p in paths]
    _out(emit_report(reports, args.format))


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filterprune", description="Filter pruning experiments for residual CNNs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_seed(p):
        p.add_argument("--seed", type=int, default=None, help="seed for all randomness (overrides the config)")
        return p

    p = with_seed(sub.add_parser("gen-data", help="generate the synthetic dataset"))
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_gen_data)

    for name, func in (("train", cmd_train), ("prune", cmd_prune)):
        p = with_seed(sub.add_parser(name, help=f"{name} with k-fold cross-validation"))
        p.add_argument("config")
        if name == "prune":
            p.add_argument("--method", choices=("hard", "asfp"), required=True)
        p.add_argument("--out", default=None, help="results directory (overrides output_dir)")
        p.add_argument("--format", choices=("json", "table"), default="json")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--no-checkpoints", action="store_true")
        p.add_argument("--resume", action="store_true",
                       help="reuse finished job records from an identical earlier run (needs --no-checkpoints)")
        p.set_defaults(func=func)

    p = with_seed(sub.add_parser("eval", help="evaluate a checkpoint on a manifest"))
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_eval)

    p = with_seed(sub.add_parser("count", help="parameter and FLOP counts"))
    p.add_argument("source", help="experiment config JSON or checkpoint")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--per-layer", action="store_true")
    p.set_defaults(func=cmd_count)

    p = with_seed(sub.add_parser("baseline", help="window-mean threshold baseline"))
    p.add_argument("manifest")
    p.add_argument("--windows", type=int, nargs="+", default=[2, 4, 8, 16, 32])
    p.add_argument("--thresholds", type=float, nargs="+", default=None,
                   help="explicit grid (default: every distinct cut, i.e. exhaustive)")
    p.set_defaults(func=cmd_baseline)

    p = with_seed(sub.add_parser("report", help="render saved reports"))
    p.add_argument("results_dir")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FilterPruneError as exc:
        _fail(type(exc).__name__, str(exc))
    except (OSError, UnicodeDecodeError) as exc:
        _fail(type(exc).__name__, str(exc))
    except json.JSONDecodeError as exc:
        _fail("FormatError", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
