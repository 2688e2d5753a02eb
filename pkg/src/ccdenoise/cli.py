"""``ccdenoise`` command line: phantom-gen, train, denoise, evaluate, classify-eval.

Exit codes: 0 success, 1 runtime/data failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from . import metrics as M
from .image import DatasetManifest, list_images, load_image, load_rois, save_image
from .losses import LossWeights
from .nn import NetConfig
from .phantom import PhantomConfig, generate_manifest
from .trainer import DualModel, TrainConfig, classify_batch, denoise_batch, train_dual, write_log_csv

log = logging.getLogger("ccdenoise")

RUN_CONFIG_KEYS = {"net", "train", "phantom", "loss_weights", "paths"}


class UsageError(Exception):
    pass


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def load_run_config(path):
    """Parse a run-config JSON into ``(NetConfig, TrainConfig, PhantomConfig | None)``."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("run config must be a JSON object")
    unknown = set(doc) - RUN_CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
    net = NetConfig.from_dict(doc.get("net", {}))
    train_doc = dict(doc.get("train", {}))
    if "loss_weights" in doc:
        train_doc["loss_weights"] = doc["loss_weights"]
    lw = train_doc.get("loss_weights")
    if isinstance(lw, dict):
        extra = set(lw) - {"w_r", "w_c"}
        if extra:
            raise ValueError(f"unknown loss_weights keys: {sorted(extra)}")
        train_doc["loss_weights"] = LossWeights(**lw)
    train = TrainConfig.from_dict(train_doc)
    phantom = None
    if "phantom" in doc:
        ph = doc["phantom"]
        extra = set(ph) - set(PhantomConfig.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown phantom keys: {sorted(extra)}")
        phantom = PhantomConfig(**ph)
    for key, p in doc.get("paths", {}).items():
        if not Path(p).exists():
            raise FileNotFoundError(f"config path {key}={p} does not exist")
    return net, train, phantom


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantom_gen(args):
    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    if not args.looks > 0:
        raise UsageError("--looks must be positive")
    cfg = PhantomConfig(size=args.size, num_layers=args.layers, speckle_looks=args.looks, seed=args.seed)
    generate_manifest(args.per_class, cfg, args.out, fmt=args.format)
    print(Path(args.out) / "manifest.json")
    return 0


def cmd_train(args):
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    if not Path(args.config).is_file():
        raise UsageError(f"config not found: {args.config}")
    net, train, _ = load_run_config(args.config)
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, rows = train_dual(manifest, net, train)
    except FloatingPointError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    model.save(out)
    write_log_csv(rows, out / "train_log.csv")
    print(out / "model.json")
    return 0


def _input_files(path):
    p = Path(path)
    if p.is_dir():
        return list_images(p)
    if p.is_file():
        return [p]
    raise FileNotFoundError(f"no such input: {path}")


def cmd_denoise(args):
    model = DualModel.load(args.model)
    files = _input_files(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = [load_image(f) for f in files]
    for f, img in zip(files, images):
        if img.shape != model.config.input_size:
            print(f"error: shape mismatch: {f.name} is {img.shape[0]}x{img.shape[1]}, "
                  f"model expects {model.config.input_size[0]}x{model.config.input_size[1]}",
                  file=sys.stderr)
            return 1
    for f, den in zip(files, denoise_batch(model, images)):
        save_image(den, out / f.name)
    print(f"{len(files)} image(s) written to {out}")
    return 0


def cmd_evaluate(args):
    rois = load_rois(args.rois)
    noisy = {p.name: p for p in list_images(args.noisy)}
    denoised = {p.name: p for p in list_images(args.denoised)}
    names = sorted(set(noisy) & set(denoised))
    unpaired = sorted(set(noisy) ^ set(denoised))
    if not names:
        print("error: no image names shared by --noisy and --denoised", file=sys.stderr)
        return 1
    if unpaired:
        print(f"error: unpaired files: {', '.join(unpaired)}", file=sys.stderr)
        return 1
    clean = {p.name: p for p in list_images(args.clean)} if args.clean else None
    if clean is not None:
        missing = [n for n in names if n not in clean]
        if missing:
            print(f"error: no clean reference for {', '.join(missing)}", file=sys.stderr)
            return 1
    rows, noisy_rows, den_rows = [], [], []
    for name in names:
        n_img = load_image(noisy[name])
        d_img = load_image(denoised[name])
        rn = M.evaluate_image(n_img, n_img, rois, name)
        rd = M.evaluate_image(d_img, n_img, rois, name)
        if clean is not None:
            c_img = load_image(clean[name])
            rn.extra["psnr"] = M.psnr(n_img, c_img)
            rd.extra["psnr"] = M.psnr(d_img, c_img)
        noisy_rows.append(rn)
        den_rows.append(rd)
        rows.append({"image": name, "noisy": rn.to_dict(), "denoised": rd.to_dict()})
    summary = [M.aggregate(noisy_rows, "noisy"), M.aggregate(den_rows, "denoised")]
    report = {"images": rows, "summary": summary, "rois": [r.__dict__ for r in rois]}
    M.dump_json(report, args.report)
    table = M.format_table(summary)
    Path(str(args.report) + ".txt").write_text(table)
    print(table, end="")
    return 0


def classification_summary(true, pred, subjects, num_classes=3):
    true = np.asarray(true)
    pred = np.asarray(pred)
    conf = np.zeros((num_classes, num_classes), dtype=int)
    for t, p in zip(true, pred):
        conf[t, p] += 1
    precision, recall = [], []
    for c in range(num_classes):
        col, row = conf[:, c].sum(), conf[c, :].sum()
        precision.append(float(conf[c, c] / col) if col else 0.0)
        recall.append(float(conf[c, c] / row) if row else 0.0)
    by_subject = defaultdict(list)
    for s, t, p in zip(subjects, true, pred):
        by_subject[s].append((int(t), int(p)))
    hits = 0
    for items in by_subject.values():
        votes = Counter(p for _, p in items)
        top = max(votes.values())
        subject_pred = min(c for c, v in votes.items() if v == top)
        truth = Counter(t for t, _ in items).most_common(1)[0][0]
        hits += int(subject_pred == truth)
    return {
        "n_images": int(true.size),
        "accuracy": float(np.mean(true == pred)) if true.size else 0.0,
        "precision_macro": float(np.mean(precision)),
        "recall_macro": float(np.mean(recall)),
        "precision_per_class": precision,
        "recall_per_class": recall,
        "confusion": conf.tolist(),
        "n_subjects": len(by_subject),
        "subject_accuracy": hits / len(by_subject) if by_subject else 0.0,
    }


def cmd_classify_eval(args):
    model = DualModel.load(args.model)
    manifest = DatasetManifest.load(args.manifest)
    images = manifest.load_images()
    for rec, img in zip(manifest, images):
        if img.shape != model.config.input_size:
            print(f"error: shape mismatch: {rec.path} is {img.shape}", file=sys.stderr)
            return 1
    logits = classify_batch(model, images, which=args.head)
    summary = classification_summary(manifest.labels, logits.argmax(axis=1),
                                     [r.subject for r in manifest], model.config.num_classes)
    summary["head"] = args.head
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ccdenoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="write a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(64, 64))
    p.add_argument("--looks", type=float, default=4.0)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--format", choices=["pgm", "raw"], default="pgm")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train the odd/even predictor pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one image or a directory")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="CNR / MSR / TP / EP report")
    p.add_argument("--noisy", required=True)
    p.add_argument("--denoised", required=True)
    p.add_argument("--rois", required=True)
    p.add_argument("--clean")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify-eval", help="accuracy of the encoder classification head")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--head", choices=["odd", "even"], default="odd")
    p.set_defaults(func=cmd_classify_eval)
    return parser


def _thread_limit():
    raw = os.environ.get("CHECKERBOARD_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CHECKERBOARD_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError("CHECKERBOARD_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_limit()
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
