"""Command-line entry point: label, train, detect, monitor, simulate, evaluate.

Exit codes: 0 success, 2 protocol error, 3 unreadable input, 64 usage,
66 missing file. All randomness flows from --seed (or OVERFITGUARD_SEED)
through named sub-stream derivation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import OverfitGuardError
from .history import (
    MetricSource,
    OverfitLabel,
    load_labelled_histories,
    read_history_csv,
    write_history_csv,
    write_labels_csv,
    write_manifest,
    ManifestEntry,
)

EX_OK = 0
EX_PROTOCOL = 2
EX_IO = 3
EX_USAGE = 64
EX_NOFILE = 66

_METRICS = {"val-loss": MetricSource.VAL_LOSS, "zero-one": MetricSource.ZERO_ONE_LOSS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _require_file(path, parser: _Parser) -> int | None:
    if not os.path.exists(path):
        print(f"error: no such file: {path}", file=sys.stderr)
        return EX_NOFILE
    return None


def _emit(doc: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(doc))
    else:
        for key, value in doc.items():
            print(f"{key}: {value}")


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _load_grid(spec: str, kind, canonical_len: int):
    from . import classifiers

    if spec == "default":
        return classifiers.default_grid(kind, canonical_len)
    with open(spec, encoding="utf-8") as f:
        doc = json.load(f)
    params_cls = {
        classifiers.ClassifierKind.KNN_DTW: classifiers.KnnDtwParams,
        classifiers.ClassifierKind.TSF: classifiers.TsfParams,
        classifiers.ClassifierKind.SAX_VSM: classifiers.SaxVsmParams,
    }[kind]
    return [params_cls.from_dict(item) for item in doc]


def _cmd_train(args, parser) -> int:
    import time

    from . import classifiers

    code = _require_file(args.manifest, parser)
    if code is not None:
        return code
    kind = classifiers.ClassifierKind(args.classifier.replace("-", "_"))
    labelled = load_labelled_histories(args.manifest)
    data = [
        (h.val_loss, label)
        for h, label in labelled
        if label in (OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT)
    ]
    canonical_len = None if args.canonical_len == 0 else args.canonical_len
    normalization = classifiers.Normalization(args.normalization)
    grid = _load_grid(args.grid, kind, args.canonical_len or classifiers.DEFAULT_CANONICAL_LEN)
    report = classifiers.grid_search_cv(
        kind, grid, data, seed=args.seed,
        canonical_len=canonical_len, normalization=normalization,
    )
    t0 = time.perf_counter()
    model = classifiers.fit(
        kind, report.best_params, data,
        canonical_len=canonical_len, normalization=normalization,
    )
    train_time = time.perf_counter() - t0
    classifiers.save_model(model, args.out)
    cv_path = Path(args.out).with_suffix(".cv.json")
    with open(cv_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    if not args.quiet:
        _emit(
            {
                "model": str(args.out),
                "cv_report": str(cv_path),
                "best_cv_f": round(report.best_score, 4),
                "train_time_s": round(train_time, 4),
                "n_curves": len(data),
            },
            args.format,
        )
    return EX_OK


# --------------------------------------------------------------------------
# detect
# --------------------------------------------------------------------------


def _cmd_detect(args, parser) -> int:
    from . import classifiers, detectors

    code = _require_file(args.model, parser)
    if code is not None:
        return code
    model = classifiers.load_model(args.model)
    failures = 0
    for path in args.histories:
        try:
            history = read_history_csv(path)
            label, score = detectors.detect(model, history)
        except (OSError, OverfitGuardError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        print(json.dumps({"id": history.id, "label": label.value, "score": score}))
    return EX_IO if failures else EX_OK


# --------------------------------------------------------------------------
# monitor
# --------------------------------------------------------------------------


def _cmd_monitor(args, parser) -> int:
    from . import prevention

    model = None
    if args.model is not None:
        code = _require_file(args.model, parser)
        if code is not None:
            return code
        from . import classifiers

        model = classifiers.load_model(args.model)
    try:
        config = prevention.PreventionConfig(
            strategy=prevention.Strategy(args.strategy),
            patience=args.patience,
            smoothing_window=args.smoothing_window,
            window=args.window,
            step=args.step,
            min_delta=args.min_delta,
            metric=_METRICS[args.metric],
        )
        session = prevention.MonitorSession(config, model)
    except OverfitGuardError as exc:
        parser.error(str(exc))
    return prevention.run_monitor(session, sys.stdin, sys.stdout)


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def _cmd_simulate(args, parser) -> int:
    from . import simulation

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    if args.mode == "synthetic":
        corpus = simulation.synthetic_corpus(
            n_curves=args.n,
            length=args.length,
            seed=simulation.derive_seed(args.seed, "synthetic-corpus"),
            with_accuracy=args.with_accuracy,
        )
        labels = {}
        for history, label in corpus:
            path = out_dir / f"{history.id}.csv"
            write_history_csv(history, path)
            entries.append(ManifestEntry(str(path), label, dict(history.meta)))
            labels[history.id] = label
        write_labels_csv(labels, out_dir / "labels.csv")
    else:
        if args.data is not None:
            code = _require_file(args.data, parser)
            if code is not None:
                return code
            if args.n_inputs is None or args.n_outputs is None:
                parser.error("--data requires --n-inputs and --n-outputs")
            dataset = simulation.load_tabular_csv(
                args.data, args.n_inputs, args.n_outputs,
                split=args.split, seed=simulation.derive_seed(args.seed, "split"),
            )
        else:
            dataset = simulation.make_toy_dataset(seed=simulation.derive_seed(args.seed, "toy"))
        histories = simulation.simulate_corpus(
            [dataset], epochs=args.epochs, seed=args.seed,
        )
        for history in histories:
            path = out_dir / f"{history.id}.csv"
            write_history_csv(history, path)
            entries.append(ManifestEntry(str(path), None, dict(history.meta)))
    manifest_path = out_dir / "manifest.json"
    write_manifest(entries, manifest_path)
    if not args.quiet:
        _emit({"out": str(out_dir), "histories": len(entries)}, args.format)
    return EX_OK


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def _parse_strategy_spec(spec: str, metric: MetricSource, parser):
    from . import classifiers
    from .prevention import PreventionConfig, Strategy

    name, _, rest = spec.partition(":")
    try:
        strategy = Strategy(name)
    except ValueError:
        parser.error(f"unknown strategy {name!r}")
    kwargs: dict = {}
    model = None
    for part in filter(None, rest.split(",")):
        key, _, value = part.partition("=")
        key = key.replace("-", "_")
        if key == "model":
            model = classifiers.load_model(value)
        elif key in ("patience", "smoothing_window", "window", "step"):
            kwargs[key] = int(value)
        elif key == "min_delta":
            kwargs[key] = float(value)
        else:
            parser.error(f"unknown strategy option {key!r}")
    config = PreventionConfig(strategy=strategy, metric=metric, **kwargs)
    return spec, config, model


def _cmd_evaluate(args, parser) -> int:
    from . import classifiers
    from .evaluation import EvalReport, StrategySpec, evaluate_detection, evaluate_prevention

    code = _require_file(args.manifest, parser)
    if code is not None:
        return code
    labelled = load_labelled_histories(args.manifest)
    report = EvalReport()
    if args.detection:
        if not args.model:
            parser.error("--detection requires at least one --model")
        pairs = [(h, l) for h, l in labelled if l is not None]
        for model_path in args.model:
            code = _require_file(model_path, parser)
            if code is not None:
                return code
            model = classifiers.load_model(model_path)
            report.detection.append(
                evaluate_detection(model, pairs, name=Path(model_path).stem)
            )
    else:
        metric = _METRICS[args.metric]
        specs = []
        for raw in args.strategy or []:
            name, config, model = _parse_strategy_spec(raw, metric, parser)
            specs.append(StrategySpec(name, config, model))
        if args.es_sweep:
            from .prevention import PreventionConfig, Strategy

            try:
                start, end, step = (int(x) for x in args.es_sweep.split(":"))
            except ValueError:
                parser.error("--es-sweep must look like start:end:step")
            for patience in range(start, end + 1, step):
                specs.append(
                    StrategySpec(
                        f"early-stop:patience={patience}",
                        PreventionConfig(
                            strategy=Strategy.EARLY_STOP, patience=patience, metric=metric
                        ),
                        None,
                    )
                )
        if not specs:
            parser.error("--prevention requires --strategy or --es-sweep")
        histories = [h for h, _ in labelled]
        report.prevention = evaluate_prevention(specs, histories)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    md_path = out.with_suffix(".md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(report.to_markdown())
    if not args.quiet:
        _emit({"report": str(out), "markdown": str(md_path)}, args.format)
    return EX_OK


# --------------------------------------------------------------------------
# label
# --------------------------------------------------------------------------


def _cmd_label(args, parser) -> int:
    from . import detectors

    code = _require_file(args.manifest, parser)
    if code is not None:
        return code
    labelled = load_labelled_histories(args.manifest)
    if args.grid_search:
        with_labels = [(h, l) for h, l in labelled if l is not None]
        result = detectors.heuristic_grid_search(
            with_labels, tail_val_direction=args.tail_val_direction
        )
        thresholds = result.thresholds
        if not args.quiet:
            print(json.dumps(result.to_dict()))
    else:
        thresholds = detectors.HeuristicThresholds(args.inc_p, args.dec_p, args.gap_p)
    labels = {
        h.id: detectors.heuristic_label(h, thresholds, args.tail_val_direction)
        for h, _ in labelled
    }
    write_labels_csv(labels, args.out)
    if not args.quiet:
        _emit({"labels": str(args.out), "n": len(labels)}, args.format)
    return EX_OK


# --------------------------------------------------------------------------
# parser wiring
# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="overfitguard", description=__doc__)
    parser.add_argument(
        "--seed",
        type=int,
        default=int(os.environ.get("OVERFITGUARD_SEED", "0")),
        help="root random seed (default: $OVERFITGUARD_SEED or 0)",
    )
    parser.add_argument("--format", choices=("json", "table"), default="table")
    parser.add_argument("--quiet", action="store_true")
    # the same globals are accepted after the subcommand; SUPPRESS keeps the
    # root-level values when they are omitted there
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--format", choices=("json", "table"), default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common],
                       help="grid-search, fit, and save a classifier")
    p.add_argument("manifest")
    p.add_argument("--classifier", required=True, choices=("knn-dtw", "tsf", "sax-vsm"))
    p.add_argument("--grid", default="default", help="'default' or a JSON grid file")
    p.add_argument("--out", default="model.json")
    p.add_argument(
        "--canonical-len", type=int, default=100,
        help="resample length; 0 keeps variable length (KNN-DTW only)",
    )
    p.add_argument("--normalization", choices=("znorm", "none"), default="znorm")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", parents=[common], help="classify recorded histories")
    p.add_argument("model")
    p.add_argument("histories", nargs="+")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("monitor", parents=[common], help="serve the NDJSON stopping protocol on stdio")
    p.add_argument(
        "--strategy", required=True,
        choices=("early-stop", "early-stop-smoothed", "rolling-window", "whole-history"),
    )
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--smoothing-window", type=int, default=10)
    p.add_argument("--window", type=int, default=40)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--min-delta", type=float, default=0.0)
    p.add_argument("--model")
    p.add_argument("--metric", choices=("val-loss", "zero-one"), default="val-loss")
    p.set_defaults(func=_cmd_monitor)

    p = sub.add_parser("simulate", parents=[common], help="generate labelled training histories")
    p.add_argument("--mode", required=True, choices=("mlp", "synthetic"))
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10, help="synthetic curve count")
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--with-accuracy", action="store_true")
    p.add_argument("--epochs", type=int, default=100, help="mlp training epochs")
    p.add_argument("--data", help="tabular CSV for mlp mode (default: built-in toy set)")
    p.add_argument("--n-inputs", type=int)
    p.add_argument("--n-outputs", type=int)
    p.add_argument("--split", help="JSON split manifest for --data")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="score detection models or prevention strategies")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--detection", action="store_true")
    group.add_argument("--prevention", action="store_true")
    p.add_argument("manifest")
    p.add_argument("--model", action="append", help="model file (repeatable)")
    p.add_argument(
        "--strategy", action="append",
        help="spec like 'early-stop:patience=40' or "
             "'rolling-window:window=40,step=10,model=m.json' (repeatable)",
    )
    p.add_argument("--es-sweep", help="patience sweep start:end:step")
    p.add_argument("--metric", choices=("val-loss", "zero-one"), default="val-loss")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("label", parents=[common], help="heuristic-label histories")
    p.add_argument("manifest")
    p.add_argument("--inc-p", type=float, default=0.1)
    p.add_argument("--dec-p", type=float, default=0.1)
    p.add_argument("--gap-p", type=float, default=0.1)
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--tail-val-direction", choices=("decrease", "increase"),
                   default="decrease")
    p.add_argument("--out", default="labels.csv")
    p.set_defaults(func=_cmd_label)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    try:
        return args.func(args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EX_NOFILE
    except OverfitGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_IO


if __name__ == "__main__":
    sys.exit(main())
