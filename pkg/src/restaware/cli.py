"""``restaware`` command line: simulate, decode, serve, train, evaluate, summarize, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import llm
from .codec import frame_to_dict
from .features import DEFAULT_WINDOW, stratified_split
from .ingestion import (
    BROKER_TOKEN_ENV,
    BROKER_URL_ENV,
    DEFAULT_TOPIC,
    IngestError,
    SessionLog,
    ingest_mqtt,
)
from .metrics import compute_metrics, format_confusion_table
from .models import MlpConfig, fit_and_wrap, load_model, predict, save_model
from .report import write_hypnogram, write_timeline_csv
from .sessions import build_dataset, classify_frames, expand_inputs, load_session, read_frames
from .simulator import PostureLabel, default_protocol_script, generate_session, write_session
from .summarizer import SummaryConfig, aggregate_session, summarize, write_summary

log = logging.getLogger("restaware")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="restaware", description="Contactless sleep monitoring pipeline on simulated radar data.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write simulated radar sessions with truth CSVs")
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--out", required=True, help="session file, or a directory when --participants > 1")
    s.add_argument("--participants", type=_positive_int, default=1, help="sessions to generate (seeds seed..)")
    s.add_argument("--format", choices=("hex", "bin", "jsonl"), help="default: from the file suffix, else hex")
    s.add_argument("--device-id", default="sim")
    s.add_argument("--start-ms", type=_nonneg_int, default=0, help="epoch offset for JSONL and truth timestamps")

    s = sub.add_parser("decode", help="print the frames of a hex, binary or JSONL log as JSONL")
    s.add_argument("--input", required=True)

    s = sub.add_parser("serve", help="ingest frames from an MQTT broker into a JSONL store")
    s.add_argument("--broker-url", default=os.environ.get(BROKER_URL_ENV))
    s.add_argument("--topic", default=DEFAULT_TOPIC)
    s.add_argument("--out", required=True, help="JSONL store path")
    s.add_argument("--max-seconds", type=_positive_float, help="stop after this long")
    s.add_argument("--ca-certs", help="CA bundle for mqtts:// brokers")

    s = sub.add_parser("train", help="train a posture classifier on labeled sessions")
    s.add_argument("--input", required=True, nargs="+", help="session files or directories")
    s.add_argument("--model", choices=("knn", "mlp"), default="knn")
    s.add_argument("--k", type=_positive_int, default=5)
    s.add_argument("--epochs", type=_nonneg_int, default=50)
    s.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--out", required=True, help="model JSON path; metrics go to <stem>.metrics.json")

    s = sub.add_parser("evaluate", help="score a trained model on labeled sessions")
    s.add_argument("--model-file", required=True)
    s.add_argument("--input", required=True, nargs="+")
    s.add_argument("--holdout", action="store_true", help="only the validation split recorded at training time")
    s.add_argument("--out", help="also write the metrics JSON here")

    for name, helptext in (("summarize", "classify a session and write a narrative summary"),
                           ("report", "write a posture timeline CSV and an SVG hypnogram")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--input", required=True, help="session file")
        s.add_argument("--model-file", required=True)
        s.add_argument("--out", required=True)
        if name == "summarize":
            s.add_argument("--backend", choices=("template", "http"), default="template")
            s.add_argument("--base-url")
            s.add_argument("--llm-model", default="mistralai/Mistral-7B-Instruct-v0.1")
            s.add_argument("--n-sentences", type=_positive_int, default=5)
            s.add_argument("--participant", help="id used in the prompt (default: input file stem)")
    return p


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.participants == 1:
        targets = [(args.seed, out)]
    else:
        out.mkdir(parents=True, exist_ok=True)
        suffix = "." + (args.format or "hex")
        targets = [(args.seed + i, out / f"p{i + 1:02d}{suffix}") for i in range(args.participants)]
    for seed, path in targets:
        session = generate_session(default_protocol_script(seed))
        path.parent.mkdir(parents=True, exist_ok=True)
        truth = write_session(session, path, args.format, device_id=args.device_id, start_ms=args.start_ms)
        log.debug("wrote %d frames to %s (truth: %s)", len(session.frames), path, truth)
    log.info("wrote %d session(s) to %s", len(targets), out)
    return EXIT_OK


def _cmd_decode(args) -> int:
    frames, stamps = read_frames(args.input)
    for i, frame in enumerate(frames):
        row = {"index": i}
        if stamps is not None:
            row["timestamp_ms"] = stamps[i]
        row.update(frame_to_dict(frame))
        sys.stdout.write(json.dumps(row) + "\n")
    return EXIT_OK


def _cmd_serve(args) -> int:
    if not args.broker_url:
        raise UsageError(f"serve: --broker-url or {BROKER_URL_ENV} is required")
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    if args.max_seconds:
        timer = threading.Timer(args.max_seconds, stop.set)
        timer.daemon = True
        timer.start()
    with SessionLog(args.out) as store:
        summary = ingest_mqtt(args.broker_url, args.topic, store, stop, token=os.environ.get(BROKER_TOKEN_ENV),
                              ca_certs=args.ca_certs)
    sys.stdout.write(json.dumps({"records": summary.records, "decode_errors": summary.decode_errors}) + "\n")
    return EXIT_OK


def _timed_predict(model, X):
    t0 = time.perf_counter()
    labels, scores = predict(model, X)
    per_window = (time.perf_counter() - t0) / max(len(X), 1)
    return labels, scores, per_window


def _cmd_train(args) -> int:
    paths = expand_inputs(args.input)
    if not paths:
        raise UsageError("train: no session files found in --input")
    dataset = build_dataset(paths, args.window)
    train, val = stratified_split(dataset, 0.7, args.seed)
    model = fit_and_wrap(args.model, train.X, train.y, val.X, val.y, k=args.k,
                         mlp_config=MlpConfig(epochs=args.epochs, seed=args.seed))
    labels, scores, per_window = _timed_predict(model, val.X)
    metrics = compute_metrics(val.y, labels, scores, inference_seconds_per_window=per_window)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out, window=args.window, split_seed=args.seed, train_fraction=0.7,
               sessions=[p.name for p in paths])
    metrics_path = out.with_name(out.stem + ".metrics.json")
    doc = {"model": args.model, "split": "validation", **metrics.to_dict()}
    metrics_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    log.info("%s: validation accuracy %.4f, macro F1 %.4f, macro AUC %.4f on %d windows", args.model,
             metrics.accuracy, metrics.macro_f1, metrics.macro_auc, metrics.n_samples)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    model, meta = load_model(args.model_file)
    window = int(meta.get("window", DEFAULT_WINDOW))
    dataset = build_dataset(expand_inputs(args.input), window)
    if args.holdout:
        _, dataset = stratified_split(dataset, float(meta.get("train_fraction", 0.7)), int(meta.get("split_seed", 0)))
    labels, scores, per_window = _timed_predict(model, dataset.X)
    metrics = compute_metrics(dataset.y, labels, scores, inference_seconds_per_window=per_window)
    doc = metrics.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(json.dumps(doc) + "\n\n")
    sys.stdout.write(format_confusion_table(metrics.confusion, [p.name.lower() for p in PostureLabel]) + "\n")
    return EXIT_OK


def _classify(args):
    model, meta = load_model(args.model_file)
    session = load_session(args.input)
    return session, classify_frames(model, session.frames, int(meta.get("window", DEFAULT_WINDOW)))


def _cmd_summarize(args) -> int:
    session, result = _classify(args)
    aggregate = aggregate_session(result.predictions, result.amplitudes, args.participant or session.name)
    backend = llm.make_backend(args.backend, args.base_url, args.llm_model)
    summary = summarize(aggregate, backend, SummaryConfig(n_sentences=args.n_sentences, backend=args.backend))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = write_summary(summary, out)
    log.info("wrote %s and %s", out, sidecar)
    return EXIT_OK


def _cmd_report(args) -> int:
    session, result = _classify(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_timeline_csv(out / "timeline.csv", result.predictions)
    write_hypnogram(out / "hypnogram.svg", result.predictions, result.amplitudes,
                    title=f"Sleep posture hypnogram: {session.name}")
    log.info("wrote %s and %s", out / "timeline.csv", out / "hypnogram.svg")
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "decode": _cmd_decode,
    "serve": _cmd_serve,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "summarize": _cmd_summarize,
    "report": _cmd_report,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream reader (e.g. `head`) closed early
        sys.stderr.close()
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, IngestError, llm.BackendError, ArithmeticError) as exc:
        print(f"restaware {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
