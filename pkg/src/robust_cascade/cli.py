"""Command-line interface: ``synth``, ``train``, ``detect`` and ``eval``.

Exit status is 0 on success, 1 for bad input or configuration and 2 for an
internal failure. Progress is reported as one JSON object per line on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cascade import ModelFormatError, _pmap, detect, load_model, save_model, train_cascade
from .config import ConfigError, RunConfig
from .dataio import DatasetError, image_path, load_dataset, read_pgm
from .evalkit import evaluate
from .synth import write_synthetic_dataset

# keys that may be changed at detection time without retraining
DETECT_KEYS = ("seed", "occlusion.threshold")
DETECT_PREFIXES = ("inference.",)


class UserError(Exception):
    """Bad input or configuration; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _progress(**info) -> None:
    print(json.dumps(info, sort_keys=True), file=sys.stderr, flush=True)


def _run_config(args, base=None) -> RunConfig:
    cfg = RunConfig()
    if base is not None:
        cfg.cascade = base
    if args.config:
        cfg.load_file(args.config)
    cfg.apply_overrides(args.set)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    return cfg


def _load_images(records, dataset_path) -> list:
    images = []
    for rec in records:
        path = image_path(rec, dataset_path)
        try:
            images.append(read_pgm(path))
        except (OSError, ValueError) as exc:
            raise UserError(f"{path}: cannot read image ({exc})") from None
    return images


# -- detection records --------------------------------------------------------

def detection_to_json(record_id: str, det) -> dict:
    out = {
        "id": record_id,
        "landmarks": det.landmarks.tolist(),
        "visibility": det.visibility.tolist(),
        "occlusion": det.occlusion.astype(int).tolist(),
    }
    if det.trace is not None:
        out["trace"] = [{"landmarks": s.tolist(), "visibility": p.tolist()} for s, p in det.trace]
    return out


def load_detections(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise UserError(f"detections file not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                det = {
                    "id": str(obj["id"]),
                    "landmarks": np.asarray(obj["landmarks"], dtype=float),
                    "visibility": np.asarray(obj["visibility"], dtype=float),
                }
                if "trace" in obj:
                    det["trace"] = [(np.asarray(s["landmarks"], float), np.asarray(s["visibility"], float))
                                    for s in obj["trace"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise UserError(f"{path}:{lineno}: malformed detection record ({exc})") from None
            n = len(det["visibility"])
            if det["landmarks"].shape != (n, 2):
                raise UserError(f"{path}:{lineno}: landmarks shape {det['landmarks'].shape} "
                                f"does not match {n} visibility values")
            out.append(det)
    return out


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = _run_config(args)
    t0 = time.time()
    path = write_synthetic_dataset(cfg.synth, args.out_dir, name=args.name)
    _progress(event="synth", samples=cfg.synth.n_samples, dataset=str(path),
              seconds=round(time.time() - t0, 3))


def cmd_train(args) -> None:
    cfg = _run_config(args)
    records = load_dataset(args.dataset)
    if not records:
        raise UserError(f"{args.dataset}: dataset is empty")
    images = _load_images(records, args.dataset)
    _progress(event="loaded", samples=len(records), landmarks=records[0].n_landmarks)
    t0 = time.time()
    model = train_cascade(images, records, cfg.cascade, workers=args.workers,
                          progress=lambda info: _progress(**info))
    save_model(model, args.model)
    _progress(event="trained", model=str(args.model), stages=model.iterations,
              seconds=round(time.time() - t0, 3))


def _detect_config(args, model) -> RunConfig:
    overrides = list(args.set or ())
    for item in overrides:
        key = item.split("=", 1)[0].strip()
        if key not in DETECT_KEYS and not key.startswith(DETECT_PREFIXES):
            raise UserError(f"{key!r} is fixed by the trained model and cannot be changed at detection time")
    if args.config:
        raise UserError("detect takes its configuration from the model; use --set for inference keys")
    return _run_config(args, base=model.config)


def cmd_detect(args) -> None:
    model = load_model(args.model)
    cfg = _detect_config(args, model)
    model = type(model)(model.mean_face, model.stages, model.prior, cfg.cascade, model.train_log)
    records = load_dataset(args.dataset)
    if records and records[0].n_landmarks != model.n_landmarks:
        raise UserError(f"model has {model.n_landmarks} landmarks but {args.dataset} "
                        f"has {records[0].n_landmarks}")
    images = _load_images(records, args.dataset)
    t0 = time.time()
    dets = _pmap(lambda i: detect(images[i], records[i].box, model, trace=args.trace),
                 range(len(records)), args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for rec, det in zip(records, dets):
            fh.write(json.dumps(detection_to_json(rec.id, det), separators=(",", ":")) + "\n")
    _progress(event="detected", samples=len(records), out=str(out), seconds=round(time.time() - t0, 3))


def cmd_eval(args) -> None:
    records = load_dataset(args.dataset, check_images=False)
    dets = {d["id"]: d for d in load_detections(args.detections)}
    missing = [r.id for r in records if r.id not in dets]
    if missing:
        raise UserError(f"{len(missing)} records have no detection (first: {missing[0]!r})")
    ordered = [dets[r.id] for r in records]
    for rec, det in zip(records, ordered):
        if len(det["visibility"]) != rec.n_landmarks:
            raise UserError(f"detection {rec.id!r} has {len(det['visibility'])} landmarks, "
                            f"dataset has {rec.n_landmarks}")
    traces = None
    if all("trace" in d for d in ordered) and ordered:
        traces = [d["trace"] for d in ordered]
    report = evaluate([d["landmarks"] for d in ordered], [d["visibility"] for d in ordered], records,
                      traces=traces, target_precision=args.target_precision)
    paths = report.write(args.report_dir)
    sys.stdout.write(report.to_text())
    _progress(event="evaluated", samples=len(records), **{k: str(v) for k, v in paths.items()})


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON file of configuration keys")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")

    epilog = "configuration keys (default shown):\n" + RunConfig.describe()
    parser = _Parser(prog="robust-cascade", description=__doc__.splitlines()[0], epilog=epilog,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic occluded-face dataset",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("out_dir")
    p.add_argument("--name", default="dataset.jsonl", help="dataset file name inside OUT_DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a cascade model",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("dataset")
    p.add_argument("model", help="output model file (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect landmarks and occlusion",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("out", help="output detections (.jsonl)")
    p.add_argument("--trace", action="store_true", help="store per-iteration shapes and probabilities")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against a dataset")
    p.add_argument("detections")
    p.add_argument("dataset")
    p.add_argument("report_dir")
    p.add_argument("--target-precision", type=float, default=0.8)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except (UserError, ConfigError, DatasetError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
