"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline; they are also repeated in the terminal summary.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from oracles import conv1d_naive, conv2d_naive, maxpool_naive
from rfmodrec import tensor as T
from rfmodrec.dataset import IqDataset, from_bytes
from rfmodrec.functional import conv1d_forward, conv2d_forward, maxpool2d_forward
from rfmodrec.gradcheck import check_model, grad_check
from rfmodrec.models import build_conv5, build_image_cnn
from rfmodrec.synth import ModScheme, RmlScheme, SnrPolicy, SynthConfig, generate_dataset
from rfmodrec.tensor import Tensor
from rfmodrec.train import TrainConfig, dataset_loss, emit_report, evaluate, train
from rfmodrec.transforms import CtConfig, conv_transform, hann, init_ct_weights, stft
from test_tensor import OPS, _op_case

RESULTS = {}

# desk-scale CONV-5 used by the training criteria
C5_WIDTHS = (32, 32, 64, 64, 128)
C5_BATCH = 16


def record(n, ok, detail, capsys):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS[n] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------------------


def test_criterion_01_gradient_suite(capsys):
    t0 = time.time()
    worst = 0.0
    for op in OPS:
        for seed in range(20):
            rng = np.random.default_rng(seed)
            fn, tensors = _op_case(op, rng)
            probe = fn()
            r = rng.standard_normal(probe.shape)
            f = fn if probe.data.size == 1 else (lambda fn=fn, r=r: T.weighted_sum(fn(), r))
            worst = max(worst, grad_check(f, tensors, eps=1e-3).max_rel_err)
    op_worst = worst
    model_worst = {"conv5": 0.0, "ct_imagecnn": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        c5 = build_conv5(128, 4, widths=(3, 4, 4, 5, 6), seed=seed, dtype=np.float64)
        res = check_model(c5, rng.standard_normal((2, 2, 128)), rng.integers(0, 4, 2), eps=1e-3,
                          max_per_tensor=6, seed=seed)
        model_worst["conv5"] = max(model_worst["conv5"], res.max_rel_err)
        img = build_image_cnn(32, 4, widths=(2, 3, 3), ct_samples=128, residual_init_scale=0.5, seed=seed,
                              dtype=np.float64)
        res = check_model(img, rng.standard_normal((2, 2, 128)), rng.integers(0, 4, 2), eps=1e-3,
                          max_per_tensor=3, seed=seed)
        model_worst["ct_imagecnn"] = max(model_worst["ct_imagecnn"], res.max_rel_err)
    worst = max(worst, *model_worst.values())
    dt = time.time() - t0
    ok = worst < 1e-4 and dt < 120
    record(1, ok, f"max_rel_err ops={op_worst:.2e} conv5={model_worst['conv5']:.2e} "
                  f"ct_imagecnn={model_worst['ct_imagecnn']:.2e} (20 seeds each, {len(OPS)} ops) time={dt:.1f}s", capsys)


def test_criterion_02_ct_shapes(capsys):
    t0 = time.time()
    shapes = []
    for n, f in [(1024, 256), (128, 32)]:
        cfg = CtConfig(filters=f)
        w, b = init_ct_weights(cfg, seed=0)
        x = Tensor(np.random.default_rng(n).standard_normal((1, 2, n)).astype(np.float32))
        shapes.append(conv_transform(x, cfg, w, b).shape[1:])
    dt = time.time() - t0
    ok = shapes == [(2, 256, 256), (2, 32, 32)] and dt < 5
    record(2, ok, f"shapes={shapes} time={dt:.2f}s", capsys)


def test_criterion_03_oracle_equivalence(capsys):
    rng = np.random.default_rng(3)
    worst, counts = 0.0, {"conv1d": 0, "conv2d": 0, "maxpool": 0}
    for case in range(100):
        kind = ("conv1d", "conv2d", "maxpool")[case % 3]
        counts[kind] += 1
        if kind == "conv2d":
            C, O = rng.integers(1, 9, 2)
            k = int(rng.integers(1, 5))
            p = int(rng.integers(0, 3))
            s = int(rng.integers(1, 4))
            H, W = rng.integers(max(1, k - 2 * p), 9, 2)
            x, w, b = rng.standard_normal((C, H, W)), rng.standard_normal((O, C, k, k)), rng.standard_normal(O)
            got, _ = conv2d_forward(x, w, b, s, p)
            want = conv2d_naive(x, w, b, s, p)
        elif kind == "conv1d":
            C, O = rng.integers(1, 9, 2)
            k = int(rng.integers(1, 6))
            p = int(rng.integers(0, 3))
            s = int(rng.integers(1, 4))
            L = int(rng.integers(max(1, k - 2 * p), 9))
            x, w, b = rng.standard_normal((C, L)), rng.standard_normal((O, C, k)), rng.standard_normal(O)
            got, _ = conv1d_forward(x, w, b, s, p)
            want = conv1d_naive(x, w, b, s, p)
        else:
            ph, pw = rng.integers(1, 5, 2)
            C = int(rng.integers(1, 9))
            H, W = ph * rng.integers(1, 8 // ph + 1), pw * rng.integers(1, 8 // pw + 1)
            x = rng.standard_normal((C, H, W))
            got, _ = maxpool2d_forward(x, int(ph), int(pw))
            want = maxpool_naive(x, ph, pw)
        assert got.shape == want.shape
        worst = max(worst, float(np.max(np.abs(got - want))))
    record(3, worst < 1e-6, f"100 cases {counts} max|diff|={worst:.1e}", capsys)


def test_criterion_04_stft(capsys):
    rng = np.random.default_rng(4)
    parseval = 0.0
    for _ in range(50):
        x = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        X = stft(x)[0]
        lhs, rhs = np.sum(np.abs(X) ** 2), 128 * np.sum(np.abs(x * hann(128)) ** 2)
        parseval = max(parseval, abs(lhs - rhs) / rhs)
    n = np.arange(1024)
    tone_ok = all(np.all(np.argmax(np.abs(stft(np.exp(2j * np.pi * k * n / 128))), axis=1) == k) for k in range(128))
    w = hann(128)
    total = np.zeros(128 + 16 * 63)
    for s in range(0, len(total) - 127, 16):
        total[s : s + 128] += w
    interior = total[128:-128]
    spread = (interior.max() - interior.min()) / interior.mean()
    ok = parseval < 1e-6 and tone_ok and spread < 1e-9
    record(4, ok, f"parseval_rel={parseval:.1e} tone_argmax_all_128={tone_ok} cola_spread={spread:.1e}", capsys)


def test_criterion_05_overfit_toy(capsys):
    t0 = time.time()
    ds = generate_dataset([ModScheme.QPSK, ModScheme.FSK4], 32, 8, 128, SnrPolicy.noiseless())
    tr, te = ds.train(), ds.test()
    model = build_conv5(128, 2, seed=0)
    train(model, tr, te, TrainConfig(epochs=50, lr=0.1, batch_size=C5_BATCH))
    _, pred = dataset_loss(model, tr)
    acc = float(np.mean(pred == tr.labels))
    dt = time.time() - t0
    record(5, acc >= 0.99 and dt < 60, f"train_acc={acc:.4f} frames={len(tr)} epochs=50 time={dt:.1f}s", capsys)


@lru_cache(maxsize=None)
def scaled_experiment(run: int):
    """The 8-class N=1024 experiment; ``run`` only distinguishes cache entries."""
    t0 = time.time()
    ds = generate_dataset(list(ModScheme), 200, 50, 1024, SnrPolicy.grid(0, 18, 2, balanced=True),
                          SynthConfig(seed=6))
    tr, te = ds.train(), ds.test()
    model = build_conv5(1024, 8, widths=C5_WIDTHS, seed=6)
    best, hist = train(model, tr, te, TrainConfig(epochs=10, lr=0.1, batch_size=C5_BATCH, seed=6))
    report = evaluate(best, te, hist)
    return hist, report, time.time() - t0


def test_criterion_06_scaled_experiment(capsys):
    hist, report, dt = scaled_experiment(1)
    hi = report.accuracy_at_or_above(10)
    ok = hi >= 0.85 and dt < 15 * 60
    record(6, ok, f"acc_snr>=10={hi:.4f} overall={report.overall_accuracy:.4f} best_epoch={hist.best_epoch} "
                  f"time={dt:.0f}s", capsys)


def test_criterion_07_trend(capsys):
    t0 = time.time()
    ds = generate_dataset(list(ModScheme), 400, 2000, 128, SnrPolicy.grid(-20, 18, 2, balanced=True),
                          SynthConfig(seed=7))
    tr, te = ds.train(), ds.test()
    model = build_conv5(128, 8, widths=C5_WIDTHS, seed=7)
    best, hist = train(model, tr, te, TrainConfig(epochs=10, lr=0.1, batch_size=C5_BATCH, seed=7))
    report = evaluate(best, te, hist)
    snrs = sorted(report.per_snr)
    acc = [report.per_snr[s] for s in snrs]
    worst_drop = max(acc[i] - acc[i + 1] for i in range(len(acc) - 1))
    low = report.per_snr[-20.0]
    ok = abs(low - 0.125) <= 0.06 and worst_drop <= 0.03
    curve = " ".join(f"{s:g}:{a:.3f}" for s, a in zip(snrs, acc))
    record(7, ok, f"acc@-20dB={low:.4f} worst_step_drop={worst_drop:.4f} per_bucket={report.per_snr_count[-20.0]} "
                  f"time={time.time() - t0:.0f}s curve=[{curve}]", capsys)


def test_criterion_08_ct_vs_raw(capsys):
    # same data, recipe and epoch budget for both pathways; 30 epochs because
    # the CT model is still improving at 10 while CONV-5 has already plateaued
    t0 = time.time()
    ds = generate_dataset(list(RmlScheme), 200, 200, 128, SnrPolicy.grid(-20, 18, 2, balanced=True),
                          SynthConfig(seed=8))
    tr, te = ds.train(), ds.test()
    cfg = TrainConfig(epochs=30, lr=0.1, batch_size=C5_BATCH, seed=8)
    c5 = build_conv5(128, 11, widths=C5_WIDTHS, seed=8)
    best, hist = train(c5, tr, te, cfg)
    acc_c5 = evaluate(best, te, hist).accuracy_at_or_above(10)
    ct = build_image_cnn(32, 11, widths=(8, 16, 32), ct_samples=128, ct_learnable=True, seed=8)
    best, hist = train(ct, tr, te, cfg)
    acc_ct = evaluate(best, te, hist).accuracy_at_or_above(10)
    ok = acc_ct >= acc_c5
    record(8, ok, f"ct_imagecnn={acc_ct:.4f} conv5={acc_c5:.4f} at SNR>=10 (11 classes, N=128, {len(tr)} train) "
                  f"time={time.time() - t0:.0f}s", capsys)


def test_criterion_09_determinism(capsys):
    h1, r1, _ = scaled_experiment(1)
    h2, r2, _ = scaled_experiment(2)
    same_hist = h1.to_csv() == h2.to_csv()
    same_rep = emit_report(r1, "csv") == emit_report(r2, "csv") and emit_report(r1, "markdown") == emit_report(r2, "markdown")
    record(9, same_hist and same_rep, f"history_identical={same_hist} reports_identical={same_rep}", capsys)


def test_criterion_10_container_roundtrip(capsys):
    rng = np.random.default_rng(10)
    specials = np.array([-0.0, 1e-45, -1e-45, 1e-40, -2.5e-39, 1.1754942e-38], np.float32)
    n_special = 0
    bad = 0
    for case in range(50):
        n, ns, k = int(rng.integers(0, 20)), int(rng.integers(1, 64)), int(rng.integers(1, 12))
        payload = rng.standard_normal((n, 2, ns)).astype(np.float32)
        flat = payload.reshape(-1)
        if flat.size:
            idx = rng.integers(0, flat.size, min(flat.size, 6))
            flat[idx] = rng.choice(specials, len(idx))
            n_special += int(np.sum(np.signbit(flat) & (flat == 0)) + np.sum((flat != 0) & (np.abs(flat) < 1.1754944e-38)))
        split = rng.integers(0, 2, n) if case % 2 else None
        ds = IqDataset(payload, rng.integers(0, k, n), rng.integers(-2000, 2000, n),
                       rng.integers(0, 2**63, n, dtype=np.uint64), [f"class{i}" for i in range(k)], split, ns)
        raw = ds.to_bytes()
        back = from_bytes(raw)
        same = (back.payload.view(np.uint32).tobytes() == ds.payload.view(np.uint32).tobytes()
                and back.to_bytes() == raw and back.class_names == ds.class_names
                and np.array_equal(back.labels, ds.labels) and np.array_equal(back.seeds, ds.seeds))
        bad += not same
    record(10, bad == 0, f"50 cases, {bad} mismatches, {n_special} negative-zero/subnormal values", capsys)
