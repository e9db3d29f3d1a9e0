"""Acceptance suite: one pass/fail line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s``; the summary section
at the end of any pytest run repeats the lines.  Criteria 3 to 5 train
real models and take several minutes each.
"""

import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from btlner.batching import Batch, balance_batches, build_atl_batches, build_btl_batches, focus_counts
from btlner.bias import LogitRecords
from btlner.corpus import compute_class_weights, generate_random_labels, read_brat_dir, split_train_test
from btlner.evaluation import compute_metrics, knn_fit, knn_predict_many
from btlner.loss import batch_loss_and_grad
from btlner.model import ModelConfig, backward, forward, init_model
from btlner.synthetic import learnable_corpus, zipf_text_corpus
from btlner.trainer import TrainConfig, evaluate, train

from conftest import make_passage
from oracles import brute_force_knn, fd_gradients, max_relative_error

SEEDS = (0, 1, 2)

# Desk-scale protocol shared by the probe criteria.  The encoder trains from
# scratch, so the step size is far above the fine-tuning default.
PROBE_EPOCHS = 20
PROBE_LR = 0.05
PROBE_HIDDEN = 32


def test_criterion_1_masking_identity(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    instances = mismatches = 0
    for _ in range(200):
        C = int(rng.integers(2, 6))
        c = int(rng.integers(1, C))
        passages = []
        for _ in range(int(rng.integers(1, 5))):
            n = int(rng.integers(1, 12))
            passages.append(make_passage(np.where(rng.random(n) < 0.4, c, 0)))
        seed = int(rng.integers(1 << 31))
        (atl,) = build_atl_batches(passages, batch_size=len(passages), seed=seed)
        (btl,) = build_btl_batches(passages, batch_size=len(passages), seed=seed)
        logits = rng.normal(scale=3.0, size=(atl.num_tokens, C))
        weights = rng.uniform(0.05, 1.0, C)
        # the BTL copy covers the same passages in the same order
        order = [p.source_doc for p in btl.passages] == [p.source_doc for p in atl.passages]
        la, ga = batch_loss_and_grad(logits, atl.targets, atl.mask, weights)
        lb, gb = batch_loss_and_grad(logits, btl.targets, btl.mask, weights)
        instances += 1
        same = (order and np.array_equal(btl.mask, atl.mask) and la.batch_loss == lb.batch_loss
                and np.array_equal(ga, gb))
        mismatches += not same
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and instances >= 100 and elapsed < 60
    acceptance(1, "BTL == ATL bit-for-bit on {O, c} batches", ok,
               f"{instances} instances, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


def test_criterion_2_gradient_check(acceptance):
    t0 = time.perf_counter()
    cfg = ModelConfig(vocab_size=20, num_classes=3, hidden_dim=16, layers=2, heads=4, max_len=8,
                      seed=11, dtype="float64")
    model = init_model(cfg)
    rng = np.random.default_rng(11)
    passages = [make_passage(rng.integers(0, 3, 5), rng.integers(2, 20, 5), doc="a"),
                make_passage(rng.integers(0, 3, 4), rng.integers(2, 20, 4), doc="b")]
    (batch,) = build_atl_batches(passages, batch_size=2, seed=0)
    weights = compute_class_weights(np.bincount(batch.targets, minlength=3) + 1)
    logits, cache = forward(model, batch, return_cache=True)
    _, dlogits = batch_loss_and_grad(logits, batch.targets, batch.mask, weights)
    grads = backward(model, cache, dlogits)
    numeric = fd_gradients(model, batch, weights, eps=1e-4)
    err = max_relative_error(grads, numeric)
    entries = sum(len(v) for v in numeric.values())
    elapsed = time.perf_counter() - t0
    ok = err < 1e-3 and elapsed < 60
    acceptance(2, "analytic vs finite-difference gradients", ok,
               f"max rel err {err:.2e} over {entries} entries, {elapsed:.1f}s")
    assert ok


def _probe_run(seed, regime):
    base = zipf_text_corpus(seed=seed)
    corpus = generate_random_labels(base, (0.6, 0.2, 0.2), seed=seed)
    split = split_train_test(corpus, 0.85, seed, max_len=50)
    model = init_model(ModelConfig(len(split.token_vocab), 3, hidden_dim=PROBE_HIDDEN, layers=2, heads=4,
                                   max_len=50, seed=seed))
    _, traces = train(model, split, TrainConfig(epochs=PROBE_EPOCHS, learning_rate=PROBE_LR, regime=regime,
                                                seed=seed, eval_every=PROBE_EPOCHS))
    return traces[-1].bias_report


@pytest.fixture(scope="module")
def probe_reports():
    t0 = time.perf_counter()
    reports = {regime: [_probe_run(s, regime) for s in SEEDS] for regime in ("atl", "btl")}
    return reports, time.perf_counter() - t0


def test_criterion_3_atl_bias(acceptance, probe_reports):
    reports, _ = probe_reports
    atl = reports["atl"]
    A_o = float(np.mean([r.predicted_share[0] for r in atl]))
    N_o = float(np.mean([r.true_share[0] for r in atl]))
    ok = A_o >= N_o + 0.10
    acceptance(3, "ATL on random labels over-predicts O", ok,
               f"A_O {A_o:.3f} vs N_O {N_o:.3f} (need >= N_O + 0.10), seeds {list(SEEDS)}")
    assert ok


def test_criterion_4_btl_debias(acceptance, probe_reports):
    reports, elapsed = probe_reports
    gap = {k: float(np.mean([r.max_gap() for r in v])) for k, v in reports.items()}
    ok = gap["btl"] <= gap["atl"] - 0.05
    acceptance(4, "BTL shrinks max|A - N| by >= 0.05", ok,
               f"ATL {gap['atl']:.3f} vs BTL {gap['btl']:.3f}, both regimes in {elapsed / 60:.1f} min")
    assert ok


def _unweighted_accuracies(seed):
    corpus = learnable_corpus(seed=seed)
    split = split_train_test(corpus, 0.85, seed, max_len=50)
    out = {}
    for regime in ("atl", "btl"):
        model = init_model(ModelConfig(len(split.token_vocab), len(split.vocab), hidden_dim=PROBE_HIDDEN,
                                       layers=2, heads=4, max_len=50, seed=seed))
        model, traces = train(model, split, TrainConfig(epochs=PROBE_EPOCHS, learning_rate=PROBE_LR,
                                                        regime=regime, seed=seed, eval_every=PROBE_EPOCHS))
        test = traces[-1].logit_records
        if regime == "atl":
            out["atl_softmax"] = compute_metrics(test.labels, test.predictions(), split.vocab).unweighted_accuracy
        else:
            knn = knn_fit(evaluate(model, split.train), k=17)
            pred = knn_predict_many(knn, test.logits)
            out["btl_knn"] = compute_metrics(test.labels, pred, split.vocab).unweighted_accuracy
    return out


def test_criterion_5_unweighted_accuracy(acceptance):
    t0 = time.perf_counter()
    shares = learnable_corpus(seed=0).vocab.counts[1:]
    runs = [_unweighted_accuracies(s) for s in SEEDS]
    atl = float(np.mean([r["atl_softmax"] for r in runs]))
    btl = float(np.mean([r["btl_knn"] for r in runs]))
    elapsed = time.perf_counter() - t0
    ok = btl >= atl and shares.size >= 8 and shares.max() / shares.min() >= 100
    acceptance(5, "BTL+KNN unweighted accuracy >= ATL+softmax", ok,
               f"ATL+softmax {atl:.4f} vs BTL+KNN {btl:.4f}, {shares.size} entity classes, "
               f"share span {shares.max() / shares.min():.0f}x, {elapsed / 60:.1f} min")
    assert ok


def test_criterion_6_knn_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    points = rng.normal(size=(500, 5))
    # a few duplicated points exercise the distance tie rule
    points[250:260] = points[:10]
    labels = rng.integers(0, 5, 500)
    queries = rng.normal(size=(100, 5))
    queries[:5] = points[:5]
    model = knn_fit(LogitRecords(points, labels), k=17)
    got = knn_predict_many(model, queries)
    want = np.array([brute_force_knn(points, labels, q, 17) for q in queries])
    agree = float(np.mean(got == want))
    elapsed = time.perf_counter() - t0
    ok = agree == 1.0 and elapsed < 10
    acceptance(6, "KNN matches exhaustive-sort reference", ok, f"agreement {agree:.0%}, {elapsed:.2f}s")
    assert ok


def test_criterion_7_metrics_oracle(acceptance):
    t0 = time.perf_counter()
    t = compute_metrics([0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 1, 0])
    third = 2 / 3
    hand = all(np.allclose(v, [third, third], rtol=0, atol=1e-15) for v in (t.precision, t.recall, t.f1))
    rng = np.random.default_rng(7)
    equal = 0
    for _ in range(1000):
        n, C = int(rng.integers(1, 200)), int(rng.integers(2, 8))
        m = compute_metrics(rng.integers(0, C, n), rng.integers(0, C, n), C)
        equal += m.micro[0] == m.micro[1]
    elapsed = time.perf_counter() - t0
    ok = hand and equal == 1000 and elapsed < 10
    acceptance(7, "metrics match hand values; micro P == micro R", ok,
               f"hand {'ok' if hand else 'wrong'}, micro equal {equal}/1000, {elapsed:.2f}s")
    assert ok


def test_criterion_8_weights_and_balancing(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(500):
        counts = rng.integers(0, 10 ** int(rng.integers(1, 7)), int(rng.integers(2, 12)))
        counts[0] += 1
        w = compute_class_weights(counts)
        total = int(counts.sum())
        exact = [1 - Fraction(int(c), total) for c in counts]
        worst = max(worst, max(abs(Fraction(float(a)) - b) for a, b in zip(w, exact)))
    weights_ok = worst <= np.finfo(np.float64).eps
    balanced = 0
    for trial in range(100):
        passages = []
        for i in range(int(rng.integers(4, 30))):
            n = int(rng.integers(1, 10))
            passages.append(make_passage(rng.choice(5, n, p=[0.6, 0.25, 0.1, 0.04, 0.01]), doc=f"p{i}"))
        raw = build_btl_batches(passages, int(rng.integers(1, 5)), seed=trial)
        before = focus_counts(raw)
        after = focus_counts(balance_batches(raw))
        target = max(before.values())
        balanced += set(after) == set(before) and all(v == target for v in after.values())
    elapsed = time.perf_counter() - t0
    ok = weights_ok and balanced == 100 and elapsed < 10
    acceptance(8, "class weights exact; balancing equalizes focus counts", ok,
               f"max weight error {float(worst):.1e}, balanced {balanced}/100, {elapsed:.2f}s")
    assert ok


def _maccrobat_dir():
    for cand in (os.environ.get("MACCROBAT_DIR"), "data/MACCROBAT"):
        if cand and Path(cand).is_dir() and any(Path(cand).glob("*.ann")):
            return Path(cand)
    return None


def test_criterion_9_maccrobat_passages(acceptance):
    root = _maccrobat_dir()
    if root is None:
        acceptance(9, "MACCROBAT passage counts", None, "skipped: dataset not found (set MACCROBAT_DIR)")
        pytest.skip("MACCROBAT brat files not available")
    split = split_train_test(read_brat_dir(root), 0.85, seed=0, max_len=512)
    n_train, n_test = len(split.train), len(split.test)
    ok = abs(n_train - 886) <= 0.05 * 886 and abs(n_test - 169) <= 0.05 * 169
    acceptance(9, "MACCROBAT passage counts", ok, f"{n_train} train / {n_test} test (target 886 / 169 +-5%)")
    assert ok
