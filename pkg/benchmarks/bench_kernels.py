#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy fallback.

Micro-benchmarks call both implementations directly; the end-to-end rows
run a short training loop in a subprocess so each backend goes through
its own import-time selection.  Numbers are wall-clock medians.
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from todstep.kernels import _ckernels, _pykernels


def timeit(fn, repeats, inner):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples)


def bench_micro(bits, n_cand, repeats, inner):
    rng = np.random.default_rng(0)
    vocab = 600
    cand_ids = rng.integers(0, vocab, size=n_cand, dtype=np.int64)
    member = rng.integers(0, 2, size=vocab, dtype=np.int8)
    ctx = rng.integers(0, 5, size=vocab, dtype=np.int8)
    weights = rng.normal(size=2 ** bits)
    feats = np.asarray(_pykernels.hash_features(cand_ids, member, ctx, 5, 9, 2, 3, bits))
    coefs = rng.normal(size=n_cand)

    rows = []
    cases = [
        ("hash_features",
         lambda m: m.hash_features(cand_ids, member, ctx, 5, 9, 2, 3, bits)),
        ("gather_scores", lambda m: m.gather_scores(weights, feats)),
        ("scatter_add", lambda m: m.scatter_add(weights, feats, coefs)),
    ]
    for name, call in cases:
        t_c = timeit(lambda: call(_ckernels), repeats, inner)
        t_p = timeit(lambda: call(_pykernels), repeats, inner)
        rows.append((name, t_c, t_p))
    return rows


END_TO_END = """
import json, time
import todstep
from todstep.envgen import GenConfig, generate_corpus, toy_schema, build_database
from todstep.trainer import TrainConfig, train

schema = toy_schema(acts=False)
db = build_database(schema)
corpus = generate_corpus(GenConfig(seed=0, n_dialogues=80), schema, db)
snap, _ = todstep.sft_train(corpus.train, schema, epochs=1, learning_rate=0.02)
t0 = time.perf_counter()
train(TrainConfig(episodes=200, batch_size=8, seed=0), corpus, db, snap)
print(json.dumps({"backend": todstep.BACKEND, "seconds": time.perf_counter() - t0}))
"""


def bench_end_to_end():
    rows = []
    for name, env_extra in (("cython", {}), ("python", {"TODSTEP_PURE_PYTHON": "1"})):
        env = dict(os.environ)
        env.pop("TODSTEP_PURE_PYTHON", None)
        env.update(env_extra)
        out = subprocess.run([sys.executable, "-c", END_TO_END],
                             capture_output=True, text=True, env=env, check=True)
        payload = json.loads(out.stdout.strip().splitlines()[-1])
        assert payload["backend"] == name, payload
        rows.append((name, payload["seconds"]))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--bits", type=int, default=18)
    parser.add_argument("--candidates", type=int, default=200,
                        help="candidate set size per micro call")
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--inner", type=int, default=2000)
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()

    print(f"kernel micro-benchmarks (bits={args.bits}, "
          f"candidates={args.candidates}, median of {args.repeats})")
    print(f"{'kernel':<16}{'cython':>12}{'numpy':>12}{'speedup':>9}")
    for name, t_c, t_p in bench_micro(args.bits, args.candidates, args.repeats, args.inner):
        print(f"{name:<16}{t_c * 1e6:>10.1f}us{t_p * 1e6:>10.1f}us{t_p / t_c:>8.1f}x")

    if not args.skip_end_to_end:
        print()
        print("end-to-end: 200 PPO episodes on an 80-dialogue corpus")
        rows = bench_end_to_end()
        base = dict(rows)["python"]
        for name, seconds in rows:
            print(f"{name:<16}{seconds:>10.2f}s{base / seconds:>8.1f}x")


if __name__ == "__main__":
    main()
