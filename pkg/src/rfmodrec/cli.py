"""``rfmodrec`` command line: synth, convert, train, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
(divergence during training, or a failed gradient check).

Outputs go to ``--out``/``--out-dir`` when given, otherwise under
``$RFMODREC_OUT_DIR`` (default: the current directory). Every command that
writes files also writes ``<name>.manifest.json`` holding its arguments, seed
and the sha256 of each input and output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import tensor as T
from .dataset import ContainerError, IqDataset, read_container, write_container
from .functional import ShapeError
from .gradcheck import check_model
from .models import (
    CONV5_WIDTHS,
    IMAGE_CNN_WIDTHS,
    build_conv5,
    build_image_cnn,
    load_checkpoint,
    save_checkpoint,
)
from .synth import ModScheme, RmlScheme, SnrPolicy, SynthConfig, generate_dataset, resolve_scheme
from .train import DivergenceError, TrainConfig, emit_report, evaluate, train
from .transforms import CtConfig, StftConfig, conv_transform, init_ct_weights, stft_image

OUT_ENV = "RFMODREC_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("rfmodrec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def default_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or ".")


def _out_path(arg: Optional[str], name: str) -> Path:
    p = Path(arg) if arg else default_dir() / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(path: Path, args: argparse.Namespace, inputs: List[Path], outputs: List[Path]) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "version": __version__,
        "command": args.command,
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_path(p: Path) -> Path:
    return p.with_name(p.name + ".manifest.json")


def _read(path: str) -> IqDataset:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return read_container(path)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _parse_classes(text: str) -> list:
    key = text.strip().lower()
    if key in ("rf1024", "all", ""):
        return list(ModScheme)
    if key in ("rml", "rml2016"):
        return list(RmlScheme)
    try:
        return [resolve_scheme(t) for t in key.split(",") if t.strip()]
    except KeyError as e:
        raise UsageError(f"unknown modulation scheme {e.args[0]!r}") from None


def _snr_policy(args) -> SnrPolicy:
    if args.snr == "noiseless":
        return SnrPolicy.noiseless()
    if args.snr == "fixed":
        return SnrPolicy.fixed(args.snr_db)
    lo, hi, step = args.snr_range
    if step <= 0 or hi < lo:
        raise UsageError("--snr-range needs LO <= HI and STEP > 0")
    return SnrPolicy.grid(lo, hi, step, balanced=args.snr == "grid")


def cmd_synth(args) -> int:
    classes = _parse_classes(args.classes)
    ds = generate_dataset(classes, args.train_per_class, args.test_per_class, args.n_samples,
                          _snr_policy(args), SynthConfig(seed=args.seed))
    out = _out_path(args.out, "dataset.iqds")
    write_container(ds, out)
    write_manifest(_manifest_path(out), args, [], [out])
    print(f"wrote {len(ds)} frames ({len(ds.class_names)} classes, N={args.n_samples}) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    src = _read(args.inp)
    if src.is_tensor:
        raise ValueError(f"{args.inp} already holds transformed tensors")
    n = src.n_samples
    if args.transform == "ct":
        filters = args.filters or n // 4
        cfg = CtConfig(filters=filters, learnable=False)
        w, b = init_ct_weights(cfg, seed=args.seed)
        parts = []
        with T.no_grad():
            for lo in range(0, len(src), 256):
                parts.append(conv_transform(T.Tensor(src.payload[lo : lo + 256]), cfg, w, b).data)
        payload = np.concatenate(parts) if parts else np.zeros((0, 2, filters, n // 4), np.float32)
    else:
        cfg = StftConfig(window_len=args.win, overlap=args.overlap, fft_len=max(args.fft_len or args.win, args.win),
                         out_size=args.out_size)
        if n < cfg.window_len:
            raise ValueError(f"frames of {n} samples are shorter than the STFT window {cfg.window_len}")
        payload = np.stack([stft_image(f, cfg) for f in src.payload]) if len(src) else \
            np.zeros((0, 2, cfg.out_size, cfg.out_size), np.float32)
    out_ds = IqDataset(payload, src.labels, src.snr_centi, src.seeds, src.class_names, src.split, n)
    out = _out_path(args.out, f"dataset.{args.transform}.iqds")
    write_container(out_ds, out)
    write_manifest(_manifest_path(out), args, [Path(args.inp)], [out])
    print(f"wrote {len(out_ds)} tensors of shape {out_ds.frame_shape} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def _parse_widths(text: Optional[str], default) -> tuple:
    if not text:
        return tuple(default)
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--widths must be comma-separated integers, got {text!r}") from None


def _splits(args):
    ds = _read(args.data)
    if args.test_data:
        return ds, _read(args.test_data), [Path(args.data), Path(args.test_data)]
    if ds.split is None:
        raise ValueError(f"{args.data} has no train/test split table; pass --test-data")
    return ds.train(), ds.test(), [Path(args.data)]


def _build_model(kind: str, frame_shape, n_classes: int, widths_text, seed: int, ct_learnable=True):
    if kind == "conv5":
        if len(frame_shape) != 2:
            raise ValueError(f"conv5 needs raw (2, N) frames, data holds {frame_shape}")
        return build_conv5(frame_shape[1], n_classes, _parse_widths(widths_text, CONV5_WIDTHS), seed=seed)
    widths = _parse_widths(widths_text, IMAGE_CNN_WIDTHS)
    if kind == "imagecnn":
        if len(frame_shape) != 3 or frame_shape[1] != frame_shape[2]:
            raise ValueError(f"imagecnn needs (2, W, W) tensors, data holds {frame_shape}; run convert first")
        return build_image_cnn(frame_shape[1], n_classes, widths, seed=seed)
    if len(frame_shape) != 2:
        raise ValueError(f"ct-imagecnn needs raw (2, N) frames, data holds {frame_shape}")
    n = frame_shape[1]
    return build_image_cnn(n // 4, n_classes, widths, ct_samples=n, ct_learnable=ct_learnable, seed=seed)


def cmd_train(args) -> int:
    tr, te, inputs = _splits(args)
    if tr.class_names != te.class_names:
        raise ValueError("train and test class tables differ")
    model = _build_model(args.model, tr.frame_shape, len(tr.class_names), args.widths, args.seed,
                         ct_learnable=not args.frozen_ct)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=args.seed)
    log.info("model %s with %d trainable parameters", model.spec.name, model.n_params())
    best, hist = train(model, tr, te, cfg)
    out_dir = Path(args.out_dir) if args.out_dir else default_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt, hist_path, rep_path = out_dir / "model.ckpt", out_dir / "history.csv", out_dir / "report.csv"
    save_checkpoint(best, ckpt, {"best_epoch": hist.best_epoch, "min_test_loss": hist.min_test_loss,
                                 "class_names": tr.class_names})
    hist_path.write_text(hist.to_csv())
    report = evaluate(best, te, hist)
    rep_path.write_text(emit_report(report, "csv"))
    write_manifest(out_dir / "manifest.json", args, inputs, [ckpt, hist_path, rep_path])
    print(f"best epoch {hist.best_epoch} test loss {hist.min_test_loss:.4f} accuracy {report.overall_accuracy:.4f}")
    print(f"wrote {ckpt}, {hist_path}, {rep_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = _read(args.data)
    if args.split != "all":
        if ds.split is None:
            raise ValueError(f"{args.data} has no split table; use --split all")
        ds = ds.train() if args.split == "train" else ds.test()
    model, meta = load_checkpoint(args.checkpoint)
    report = evaluate(model, ds)
    report.best_epoch = int(meta.get("best_epoch", 0))
    report.min_test_loss = float(meta.get("min_test_loss", float("nan")))
    text = emit_report(report, args.format)
    if args.out:
        out = _out_path(args.out, "report")
        out.write_text(text)
        write_manifest(_manifest_path(out), args, [Path(args.data), Path(args.checkpoint)], [out])
    sys.stdout.write(text)
    print(f"accuracy={report.overall_accuracy:.4f} n={report.n_test}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.model == "conv5":
        model = build_conv5(64, 4, widths=(4, 4, 6, 6, 8), seed=args.seed, dtype=np.float64)
        x = rng.standard_normal((2, 2, 64))
    elif args.model == "imagecnn":
        model = build_image_cnn(32, 4, widths=(2, 3, 3), residual_init_scale=0.5, seed=args.seed, dtype=np.float64)
        x = rng.standard_normal((2, 2, 32, 32))
    else:
        model = build_image_cnn(32, 4, widths=(2, 3, 3), ct_samples=128, residual_init_scale=0.5,
                                seed=args.seed, dtype=np.float64)
        x = rng.standard_normal((2, 2, 128))
    res = check_model(model, x, rng.integers(0, 4, 2), eps=args.eps, max_per_tensor=args.max_per_tensor,
                      seed=args.seed)
    verdict = "PASS" if res.passed(args.tol) else "FAIL"
    print(f"{verdict} max_rel_err={res.max_rel_err:.3e} checked={res.n_checked} skipped={res.n_skipped}")
    return EXIT_OK if verdict == "PASS" else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rfmodrec", description="Synthetic RF modulation recognition toolkit")
    p.add_argument("--version", action="version", version=f"rfmodrec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    # -v is also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a labelled I/Q dataset container")
    s.add_argument("--classes", default="rf1024",
                   help="rf1024 (8 classes), rml (11 classes) or a comma list such as qpsk,fsk4 or rml:qam64")
    s.add_argument("--train-per-class", type=int, default=1000)
    s.add_argument("--test-per-class", type=int, default=200)
    s.add_argument("--n-samples", type=int, default=1024)
    s.add_argument("--snr", choices=["grid", "random", "fixed", "noiseless"], default="grid",
                   help="grid: balanced cycle over --snr-range; random: uniform draw from it")
    s.add_argument("--snr-range", type=float, nargs=3, metavar=("LO", "HI", "STEP"), default=[0.0, 18.0, 2.0])
    s.add_argument("--snr-db", type=float, default=10.0, help="level for --snr fixed")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", parents=[common], help="apply the convolutional transform or the STFT image")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--transform", choices=["ct", "stft"], required=True)
    c.add_argument("--filters", type=int, help="CT filters (default N/4, square output)")
    c.add_argument("--win", type=int, default=128)
    c.add_argument("--overlap", type=int, default=112)
    c.add_argument("--fft-len", type=int)
    c.add_argument("--out-size", type=int, default=256)
    c.add_argument("--seed", type=int, default=0, help="seed for the fixed CT weights")
    c.add_argument("--out")
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", parents=[common], help="train a classifier with plain SGD")
    t.add_argument("--data", required=True, help="container with a split table, or the train set")
    t.add_argument("--test-data")
    t.add_argument("--model", choices=["conv5", "imagecnn", "ct-imagecnn"], default="conv5")
    t.add_argument("--widths", help="comma-separated channel widths")
    t.add_argument("--frozen-ct", action="store_true", help="keep CT weights at their random init")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint and print a report")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=["test", "train", "all"], default="test")
    e.add_argument("--format", choices=["csv", "markdown"], default="csv")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a small model in float64")
    g.add_argument("--model", choices=["conv5", "imagecnn", "ct-imagecnn"], default="conv5")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--eps", type=float, default=1e-3)
    g.add_argument("--max-per-tensor", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"rfmodrec: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"rfmodrec: diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ContainerError, ShapeError, ValueError, KeyError) as e:
        print(f"rfmodrec: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
