"""Batch command line front end.

Subcommands: extract (APKs -> feature vectors), synth (synthetic dataset),
train (vectors -> detector model + loss curve), classify (model + inputs ->
verdicts), evaluate (split sweep -> report table). Exit codes: 0 success,
1 usage error, 2 input/data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .apk import ApkError
from .autoencoder import (
    DivergenceDetected,
    TrainConfig,
    build_network,
    reconstruction_error,
    train,
)
from .axml import AxmlError
from .detector import (
    DetectorModel,
    EmptyClass,
    DetectorError,
    LabeledDataset,
    calibrate_threshold,
    classify,
    generate_synthetic_dataset,
    load_detector,
    report_to_dict,
    run_split_sweep,
    save_detector,
    summarize_sweep,
)
from .dex import DexError
from .features import (
    FeatureError,
    FeatureVector,
    default_vocabulary,
    extract_report,
    load_vocabulary,
    read_vector_records,
    vectorize,
    write_vector_records,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_DIVERGENCE = 3

# Fixed default so runs without --seed / --reference-time stay reproducible.
DEFAULT_SEED = 0
DEFAULT_REFERENCE_TIME = "2018-01-01T00:00:00+00:00"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract says 1
        raise _UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_manifest(command: str, config: dict, inputs: list[Path]) -> dict:
    return {
        "command": command,
        "config": config,
        "input_digests": [
            {"path": str(p), "sha256": _sha256(p)} for p in sorted(inputs)
        ],
        "tool_version": __version__,
    }


def _manifest_comment(manifest: dict) -> str:
    return "run-manifest=" + json.dumps(manifest, sort_keys=True)


def _parse_reference_time(text: str) -> datetime:
    moment = datetime.fromisoformat(text)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment


def _load_vocab(path: str | None):
    if path is None:
        return default_vocabulary()
    return load_vocabulary(path)


def _collect_inputs(raw_paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for raw in raw_paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(p for p in path.rglob("*") if p.is_file()))
        else:
            files.append(path)
    return files


def cmd_extract(args) -> int:
    vocab = _load_vocab(args.vocab)
    reference_time = _parse_reference_time(args.reference_time)
    inputs = _collect_inputs(args.inputs)
    if not inputs:
        print("no inputs processed", file=sys.stderr)
        return EXIT_INPUT

    records = []
    log_lines: list[str] = []
    for path in inputs:
        app_id = path.name.replace(",", "_")
        try:
            report = extract_report(
                path.read_bytes(), app_id, vocab, reference_time
            )
        except (ApkError, AxmlError, DexError, OSError) as exc:
            message = "skipped %s: %s" % (path, exc)
            print("warning: " + message, file=sys.stderr)
            log_lines.append(message)
            continue
        vector = vectorize(report, vocab)
        records.append((vector.app_id, "unknown", vector.bits))
        for note in report.diagnostics:
            log_lines.append("%s\t%s" % (app_id, note))

    if not records:
        print("no inputs processed", file=sys.stderr)
        return EXIT_INPUT

    manifest = _run_manifest(
        "extract",
        {"vocab": args.vocab, "reference_time": args.reference_time},
        inputs,
    )
    write_vector_records(
        args.out,
        vocab.fingerprint,
        records,
        header_comments=(_manifest_comment(manifest),),
    )
    log_path = args.log or (args.out + ".log")
    Path(log_path).write_text(
        "".join(line + "\n" for line in log_lines), encoding="utf-8"
    )
    print("wrote %d records to %s" % (len(records), args.out))
    return EXIT_OK


def cmd_synth(args) -> int:
    vocab = _load_vocab(args.vocab)
    dataset = generate_synthetic_dataset(
        args.n_benign, args.n_malicious, args.seed, args.noise, vocab
    )
    manifest = _run_manifest(
        "synth",
        {
            "n_benign": args.n_benign,
            "n_malicious": args.n_malicious,
            "seed": args.seed,
            "noise": args.noise,
            "vocab": args.vocab,
        },
        [],
    )
    dataset.to_file(args.out, header_comments=(_manifest_comment(manifest),))
    print("wrote %d records to %s" % (len(dataset), args.out))
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = LabeledDataset.from_file(args.dataset)
    malicious_rows = dataset.class_indices("malicious")
    if not malicious_rows:
        print("no malicious records in %s" % args.dataset, file=sys.stderr)
        return EXIT_INPUT
    matrix = dataset.matrix[malicious_rows]

    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        shuffle_seed=args.shuffle_seed if args.shuffle_seed is not None else args.seed,
        init_scheme=args.init_scheme,
    )
    dimension = dataset.dimension
    net = build_network(
        (dimension, 200, 100, 100, dimension),
        ("sigmoid", "relu", "tanh", "sigmoid"),
        seed=args.seed,
        init_scheme=args.init_scheme,
    )
    try:
        trained, curve = train(net, matrix, cfg)
    except DivergenceDetected as exc:
        print("training diverged: %s" % exc, file=sys.stderr)
        return EXIT_DIVERGENCE

    method = "max" if args.calibration == "max" else "percentile"
    threshold = calibrate_threshold(
        trained, matrix, method=method, percentile=args.percentile
    )

    vocabulary = None
    if args.vocab is not None:
        vocabulary = load_vocabulary(args.vocab)
    else:
        candidate = default_vocabulary()
        if candidate.fingerprint == dataset.vocabulary_fingerprint:
            vocabulary = candidate
    if vocabulary is not None and vocabulary.fingerprint != dataset.vocabulary_fingerprint:
        print(
            "vocabulary fingerprint %s does not match dataset fingerprint %s"
            % (vocabulary.fingerprint, dataset.vocabulary_fingerprint),
            file=sys.stderr,
        )
        return EXIT_INPUT

    calibration_text = (
        "percentile:%g" % args.percentile if method == "percentile" else "max"
    )
    model = DetectorModel(
        network=trained,
        threshold=threshold,
        calibration_method=calibration_text,
        vocabulary_fingerprint=dataset.vocabulary_fingerprint,
        vocabulary=vocabulary,
    )
    manifest = _run_manifest(
        "train",
        {
            "dataset": args.dataset,
            "seed": args.seed,
            "shuffle_seed": cfg.shuffle_seed,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "init_scheme": cfg.init_scheme,
            "calibration": calibration_text,
        },
        [Path(args.dataset)],
    )
    save_detector(model, args.model_out, run_manifest=manifest)

    curve_path = args.curve_out or (args.model_out + ".loss.tsv")
    with open(curve_path, "w", encoding="utf-8") as handle:
        handle.write("#" + _manifest_comment(manifest) + "\n")
        handle.write("#epoch\tmean-loss\n")
        for epoch, loss in enumerate(curve):
            handle.write("%d\t%r\n" % (epoch, loss))

    print("trained on %d malicious records" % len(malicious_rows))
    print("final-loss %r" % (curve[-1] if curve else float("nan")))
    print("threshold %r" % threshold)
    return EXIT_OK


def _classify_vector_file(model: DetectorModel, path: Path, out) -> int:
    fingerprint, records = read_vector_records(path)
    if fingerprint != model.vocabulary_fingerprint:
        print(
            "fingerprint mismatch: file %s, model %s"
            % (fingerprint, model.vocabulary_fingerprint),
            file=sys.stderr,
        )
        return EXIT_INPUT
    for app_id, _label, bits in records:
        vector = FeatureVector(
            app_id=app_id, bits=bits, vocabulary_fingerprint=fingerprint
        )
        error = reconstruction_error(model.network, bits)
        verdict = classify(model, vector)
        out.write("%s\t%r\t%s\n" % (app_id, error, verdict))
    return EXIT_OK


def cmd_classify(args) -> int:
    model = load_detector(args.model)
    reference_time = _parse_reference_time(args.reference_time)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    if args.out:
        manifest = _run_manifest(
            "classify",
            {"model": args.model, "reference_time": args.reference_time},
            [Path(args.model)] + [Path(p) for p in args.inputs],
        )
        out.write("#" + _manifest_comment(manifest) + "\n")
    try:
        for raw in args.inputs:
            path = Path(raw)
            head = b""
            try:
                with open(path, "rb") as handle:
                    head = handle.read(64)
            except OSError as exc:
                print("cannot read %s: %s" % (path, exc), file=sys.stderr)
                return EXIT_INPUT
            if head.startswith(b"#vocabulary-fingerprint="):
                status = _classify_vector_file(model, path, out)
                if status != EXIT_OK:
                    return status
                continue
            if model.vocabulary is None:
                print(
                    "model has no embedded vocabulary; extract features first",
                    file=sys.stderr,
                )
                return EXIT_INPUT
            app_id = path.name.replace(",", "_")
            try:
                report = extract_report(
                    path.read_bytes(), app_id, model.vocabulary, reference_time
                )
            except (ApkError, AxmlError, DexError) as exc:
                print("cannot parse %s: %s" % (path, exc), file=sys.stderr)
                return EXIT_INPUT
            vector = vectorize(report, model.vocabulary)
            error = reconstruction_error(model.network, vector.bits)
            verdict = classify(model, vector)
            out.write("%s\t%r\t%s\n" % (app_id, error, verdict))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dataset = LabeledDataset.from_file(args.dataset)
    fractions = [float(part) for part in args.splits.split(",") if part]
    seeds = [int(part) for part in args.seeds.split(",") if part]
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        shuffle_seed=DEFAULT_SEED,
        init_scheme=args.init_scheme,
    )
    failures: list[str] = []
    curves: dict[str, list[float]] = {}
    method = "max" if args.calibration == "max" else "percentile"
    reports = run_split_sweep(
        dataset,
        fractions,
        seeds,
        cfg,
        failures=failures,
        curves=curves,
        calibration=method,
        percentile=args.percentile,
        benign_routing=args.benign_routing,
    )
    for failure in failures:
        print("cell failed: " + failure, file=sys.stderr)
    if not reports:
        print("no evaluable cells", file=sys.stderr)
        return EXIT_INPUT

    rows = summarize_sweep(reports)
    if args.format == "json-lines":
        for report in reports:
            print(json.dumps(report_to_dict(report), sort_keys=True))
    else:
        print("%-12s %-10s %-10s" % ("split", "accuracy", "f1"))
        for row in rows:
            print(
                "%-12s %-10.2f %-10.2f"
                % (row["split"], row["accuracy"] * 100.0, row["f1"] * 100.0)
            )

    if args.out:
        manifest = _run_manifest(
            "evaluate",
            {
                "dataset": args.dataset,
                "splits": args.splits,
                "seeds": args.seeds,
                "learning_rate": cfg.learning_rate,
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "init_scheme": cfg.init_scheme,
                "calibration": method,
                "percentile": args.percentile,
                "benign_routing": args.benign_routing,
            },
            [Path(args.dataset)],
        )
        payload = {
            "run_manifest": manifest,
            "summary": rows,
            "reports": [report_to_dict(r) for r in reports],
        }
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=1, sort_keys=True)
            handle.write("\n")
    if args.curves_dir:
        curves_dir = Path(args.curves_dir)
        curves_dir.mkdir(parents=True, exist_ok=True)
        for key, curve in curves.items():
            with open(curves_dir / ("loss-%s.tsv" % key), "w", encoding="utf-8") as handle:
                handle.write("#epoch\tmean-loss\n")
                for epoch, loss in enumerate(curve):
                    handle.write("%d\t%r\n" % (epoch, loss))
    return EXIT_OK


def _add_train_flags(parser) -> None:
    parser.add_argument("--learning-rate", type=float, default=0.01)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument(
        "--init-scheme",
        choices=("uniform-scaled", "normal-scaled"),
        default="uniform-scaled",
    )
    parser.add_argument(
        "--calibration", choices=("percentile", "max"), default="percentile"
    )
    parser.add_argument("--percentile", type=float, default=95.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="droidae", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    extract = commands.add_parser("extract", help="APKs to feature vectors")
    extract.add_argument("inputs", nargs="+", help="APK files or directories")
    extract.add_argument("--vocab", default=None, help="vocabulary JSON path")
    extract.add_argument("--out", required=True, help="vector file to write")
    extract.add_argument("--log", default=None, help="diagnostics sidecar path")
    extract.add_argument("--reference-time", default=DEFAULT_REFERENCE_TIME)
    extract.set_defaults(handler=cmd_extract)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("n_benign", type=int)
    synth.add_argument("n_malicious", type=int)
    synth.add_argument("--seed", type=int, default=DEFAULT_SEED)
    synth.add_argument("--noise", type=float, default=0.05)
    synth.add_argument("--vocab", default=None)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    train_cmd = commands.add_parser("train", help="train a detector model")
    train_cmd.add_argument("dataset")
    train_cmd.add_argument("--model-out", required=True)
    train_cmd.add_argument("--curve-out", default=None)
    train_cmd.add_argument("--vocab", default=None)
    train_cmd.add_argument("--seed", type=int, default=DEFAULT_SEED)
    train_cmd.add_argument("--shuffle-seed", type=int, default=None)
    _add_train_flags(train_cmd)
    train_cmd.set_defaults(handler=cmd_train)

    classify_cmd = commands.add_parser(
        "classify", help="label APKs or vector files with a trained model"
    )
    classify_cmd.add_argument("model")
    classify_cmd.add_argument("inputs", nargs="+")
    classify_cmd.add_argument("--out", default=None)
    classify_cmd.add_argument("--reference-time", default=DEFAULT_REFERENCE_TIME)
    classify_cmd.set_defaults(handler=cmd_classify)

    evaluate_cmd = commands.add_parser(
        "evaluate", help="split sweep with report table"
    )
    evaluate_cmd.add_argument("dataset")
    evaluate_cmd.add_argument("--splits", default="0.8,0.7,0.6,0.5")
    evaluate_cmd.add_argument("--seeds", default=str(DEFAULT_SEED))
    evaluate_cmd.add_argument(
        "--benign-routing",
        choices=("merge-train-benign", "benign-in-test-only"),
        default="merge-train-benign",
    )
    evaluate_cmd.add_argument("--format", choices=("table", "json-lines"), default="table")
    evaluate_cmd.add_argument("--out", default=None)
    evaluate_cmd.add_argument("--curves-dir", default=None)
    _add_train_flags(evaluate_cmd)
    evaluate_cmd.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.handler(args)
    except (FeatureError, DetectorError, EmptyClass, OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except DivergenceDetected as exc:
        print("training diverged: %s" % exc, file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
