"""Command-line entry point: ``cabinloc <subcommand> [options]``.

Subcommands: gen-cabin, simulate, fit, train, evaluate, montecarlo. Every
subcommand takes ``--seed``, ``-o/--output`` and ``--quiet``. Exit codes are
0 on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import correction, montecarlo, neuralnet
from .channel_sim import PROFILE_ALIASES, PROFILES, Dataset, generate_dataset, get_profile
from .correction import IdentityModel
from .geometry import CabinLayout, generate_cabin
from .localization import correction_method, evaluate

log = logging.getLogger("cabinloc")

THREADS_ENV = "CABIN_LOCATE_THREADS"


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {path}")
    return p


def _load_layout(path: str) -> CabinLayout:
    return CabinLayout.load(_existing(path))


def _load_dataset(args) -> Dataset:
    layout = _load_layout(args.layout)
    return Dataset.from_jsonl(_existing(args.data), layout)


# -- subcommands --------------------------------------------------------------

def cmd_gen_cabin(args) -> None:
    layout = generate_cabin(rows=args.rows, columns=args.columns, pitch=args.pitch,
                            width_spacing=args.width_spacing, anchor_count=args.anchors,
                            seed=args.seed)
    layout.save(args.output)
    log.info("wrote %s: %d seats, %d anchors", args.output, len(layout.seats), len(layout.anchors))


def cmd_simulate(args) -> None:
    layout = _load_layout(args.layout)
    profile = get_profile(args.profile)
    ds = generate_dataset(layout, profile, repetitions=args.reps, seed=args.seed)
    ds.to_jsonl(args.output)
    log.info("wrote %s: %d records (%d train, %d test)", args.output, len(ds),
             len(ds.split("train")), len(ds.split("test")))


_FITTERS = {"offset": correction.fit_offset, "lr": correction.fit_lr, "rssi": correction.fit_rssi}


def cmd_fit(args) -> None:
    ds = _load_dataset(args)
    model = _FITTERS[args.method](ds)
    correction.save_model(model, args.output)
    log.info("wrote %s model to %s", args.method, args.output)


def cmd_train(args) -> None:
    ds = _load_dataset(args)
    config = neuralnet.TrainConfig(learning_rate=args.learning_rate, batch_size=args.batch_size,
                                   epochs=args.epochs, seed=args.seed, patience=args.patience)
    history: list[dict] = []
    model = neuralnet.train(ds, args.variant, config, history=history)
    out = neuralnet.save_model(model, args.output)
    log_path = Path(args.log) if args.log else out.with_suffix(".epochs.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])
    log.info("wrote %s (best epoch %s of %s), epoch log %s", out, model.summary["best_epoch"],
             model.summary["epochs_run"], log_path)


def load_any_model(path: str):
    """Correction model or NN checkpoint, told apart by the file contents."""
    p = _existing(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not a JSON model file ({exc})") from None
    if isinstance(doc, dict) and doc.get("format") == neuralnet.CHECKPOINT_FORMAT:
        return neuralnet.load_model(p)
    if isinstance(doc, dict) and "type" in doc:
        return correction.model_from_dict(doc)
    raise CliError(f"{path}: unrecognized model file")


def _method_for(model):
    if isinstance(model, neuralnet.MlpModel):
        return neuralnet.nn_method(model)
    return correction_method(model.kind, model)


def cmd_evaluate(args) -> None:
    ds = _load_dataset(args)
    methods = [] if args.no_raw else [correction_method("raw", IdentityModel())]
    for path in args.model or []:
        methods.append(_method_for(load_any_model(path)))
    if not methods:
        raise CliError("no methods to evaluate")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise CliError(f"duplicate method names {names}")
    report = evaluate(ds, methods)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    if not args.quiet:
        for r in report.rows:
            if r.placement != "all":
                continue
            if r.metric == "seat_assignment":
                print(f"{r.method:10s} seat accuracy {r.seat_accuracy:.3f} "
                      f"(x {r.x_accuracy:.3f}, y {r.y_accuracy:.3f})")
            else:
                print(f"{r.method:10s} {r.metric:18s} mean {r.mean:.3f} m  q95 {r.q95:.3f} m")


def cmd_montecarlo(args) -> None:
    ds = _load_dataset(args)
    if args.study == "anchors":
        config = montecarlo.AugmentationConfig(extra_anchor_counts=tuple(args.counts),
                                               runs_per_count=args.runs, seed=args.seed)
        result = montecarlo.simulate_added_anchors(ds.layout, ds, config)
    else:
        result = montecarlo.simulate_error_scaling(ds, montecarlo.ScalingConfig(tuple(args.alphas), args.seed))
    result.to_csv(args.output)
    if not args.quiet:
        for r in result.rows:
            if r.placement == "all":
                print(f"{r.study} {r.parameter:g}: mean {r.mean:.3f} m  q90 {r.q90:.3f} m")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0, help="root RNG seed (default 0)")
    common.add_argument("-o", "--output", required=True, help="output file (directory for evaluate)")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--layout", required=True, help="cabin layout JSON")
    data.add_argument("--data", required=True, help="dataset JSON-Lines file")

    parser = argparse.ArgumentParser(prog="cabinloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-cabin", parents=[common], help="generate a cabin layout")
    p.add_argument("--rows", type=_positive_int, default=27)
    p.add_argument("--columns", default="ABCDEF")
    p.add_argument("--pitch", type=float, default=0.79, help="row pitch in meters")
    p.add_argument("--width-spacing", type=float, default=0.46, help="seat width spacing in meters")
    p.add_argument("--anchors", type=_positive_int, default=11)
    p.set_defaults(func=cmd_gen_cabin)

    p = sub.add_parser("simulate", parents=[common], help="simulate a ranging dataset")
    p.add_argument("--layout", required=True)
    p.add_argument("--profile", default="aircraft", choices=sorted(set(PROFILES) | set(PROFILE_ALIASES)))
    p.add_argument("--reps", type=_positive_int, default=10, help="repetitions per tag position")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common, data], help="fit a per-anchor correction model")
    p.add_argument("--method", required=True, choices=sorted(_FITTERS))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", parents=[common, data], help="train a neural-network variant")
    p.add_argument("--variant", required=True, choices=list(neuralnet.VARIANT_ALIASES))
    p.add_argument("--epochs", type=_positive_int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--patience", type=_positive_int, default=25)
    p.add_argument("--log", help="epoch-loss CSV (default <output stem>.epochs.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, data], help="write report.csv and report.json")
    p.add_argument("--model", action="append", help="correction model or NN checkpoint (repeatable)")
    p.add_argument("--no-raw", action="store_true", help="skip the uncorrected baseline")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("montecarlo", parents=[common, data], help="run an improvement study")
    p.add_argument("--study", required=True, choices=["anchors", "scaling"])
    p.add_argument("--counts", type=_int_list, default=[0, 5, 11, 22], help="extra anchor counts")
    p.add_argument("--runs", type=_positive_int, default=10, help="runs per anchor count")
    p.add_argument("--alphas", type=_float_list,
                   default=[round(0.1 * k, 1) for k in range(1, 11)], help="error scaling factors")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def _thread_limit(parser: argparse.ArgumentParser):
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        parser.error(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 0:
        parser.error(f"{THREADS_ENV} must be >= 0")
    return nullcontext() if n == 0 else threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        with _thread_limit(parser):
            args.func(args)
    except (CliError, ValueError, KeyError, OSError, neuralnet.TrainingDiverged) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cabinloc {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
