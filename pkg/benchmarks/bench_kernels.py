"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Per-kernel timings call both kernel tables directly in one process.  The
end-to-end row trains one ATL epoch in a subprocess per path, switching
with ``BTLNER_PURE_NUMPY``, so module binding is exercised as in real use.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from btlner import kernels
from btlner._accel import HAVE_NUMBA

E2E = """
import time
from btlner.corpus import split_train_test
from btlner.model import ModelConfig, init_model
from btlner.synthetic import learnable_corpus
from btlner.trainer import TrainConfig, train
split = split_train_test(learnable_corpus(num_docs=160, seed=0), 0.85, 0, max_len=50)
m = init_model(ModelConfig(len(split.token_vocab), len(split.vocab), hidden_dim=32, max_len=50))
cfg = TrainConfig(epochs=1, learning_rate=0.05)
train(m, split, cfg)  # warm-up (numba compile / cache load)
t = time.perf_counter()
train(m, split, cfg)
print(time.perf_counter() - t)
"""


def cases(rng):
    n, C, H, P, nh, T = 200, 10, 64, 4, 4, 50
    logits = rng.normal(size=(n, C))
    targets = rng.integers(0, C, n)
    mask = rng.random(n) < 0.8
    weights = rng.uniform(0.1, 1.0, C)
    x = rng.normal(size=(n, H)).astype(np.float32)
    g = np.ones(H, np.float32)
    b = np.zeros(H, np.float32)
    _, xhat, rstd = kernels.layernorm_forward_numpy(x, g, b)
    scores = rng.normal(size=(P, nh, T, T)).astype(np.float32)
    key_mask = np.ones((P, T), bool)
    key_mask[1, 40:] = False
    probs = kernels.masked_softmax_numpy(scores, key_mask)
    big = rng.normal(size=(n, 4 * H)).astype(np.float32)
    y, t = kernels.gelu_forward_numpy(big)
    rows = rng.normal(size=(n, H)).astype(np.float32)
    index = rng.integers(0, 400, n)
    points = rng.normal(size=(5000, C))
    queries = rng.normal(size=(500, C))
    neighbor_labels = rng.integers(0, C, (500, 17))
    return {
        "weighted_ce": (logits, targets, mask, weights, True),
        "layernorm_forward": (x, g, b),
        "layernorm_backward": (x, xhat, rstd, g),
        "masked_softmax": (scores, key_mask),
        "softmax_backward": (probs, scores),
        "gelu_forward": (big,),
        "gelu_backward": (big, t, big),
        "scatter_add_rows": (np.zeros((400, H), np.float32), index, rows),
        "knn_search": (points, queries, 17),
        "knn_vote": (neighbor_labels, C),
    }


def best_of(fn, args, repeat):
    fn(*args)  # compile / warm caches
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def end_to_end(pure):
    env = {**os.environ, "BTLNER_PURE_NUMPY": "1" if pure else "0"}
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    results = []
    for name, a in cases(np.random.default_rng(0)).items():
        tn = best_of(kernels.NUMPY_KERNELS[name], a, args.repeat)
        tb = best_of(kernels.NUMBA_KERNELS[name], a, args.repeat)
        results.append({"kernel": name, "numpy_ms": 1e3 * tn, "numba_ms": 1e3 * tb})
    if not args.skip_e2e:
        tn, tb = end_to_end(True), end_to_end(False)
        results.append({"kernel": "train epoch (end to end)", "numpy_ms": 1e3 * tn, "numba_ms": 1e3 * tb})

    print(f"{'kernel':28s}{'numpy ms':>12s}{'numba ms':>12s}{'speedup':>10s}")
    for r in results:
        print(f"{r['kernel']:28s}{r['numpy_ms']:12.3f}{r['numba_ms']:12.3f}{r['numpy_ms'] / r['numba_ms']:9.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
