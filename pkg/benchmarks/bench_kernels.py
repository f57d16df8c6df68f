"""Compare the compiled and numpy relation-indicator kernels.

    python3 benchmarks/bench_kernels.py [--repeats N]

Inputs mirror one evaluation pass on the default synthetic dataset (every
test window against 100 candidates) and one training batch.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from hpm import _pykernels
from hpm.data import ExampleBatch, SynthConfig, synth_generate
from hpm.data.store import Dataset
from hpm.rng import substream

try:
    from hpm import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    sd = synth_generate(SynthConfig(), substream(0, "synth"))
    ds = Dataset(sd.catalog, sd.sequences, sd.graph, sd.user_ids)
    rng = np.random.default_rng(0)
    test = ExampleBatch.stack(ds.split("test"))
    train = ExampleBatch.stack(ds.split("train")[:64])
    cases = {
        "eval (500 x 100 candidates)": (test.items, rng.integers(1, sd.catalog.n_items + 1, (len(test), 100))),
        "train batch (64 x 2)": (train.items, rng.integers(1, sd.catalog.n_items + 1, (64, 2))),
    }
    csr = ds.graph.csr("item")
    results = {}
    for name, (hist, targets) in cases.items():
        hist = np.ascontiguousarray(hist, dtype=np.int64)
        targets = np.ascontiguousarray(targets, dtype=np.int64)
        row = {"python_s": _time(lambda: _pykernels.relation_indicators(hist, targets, csr), args.repeats)}
        if _ckernels is not None:
            row["cython_s"] = _time(lambda: _ckernels.relation_indicators(hist, targets, csr), args.repeats)
            same = np.array_equal(_ckernels.relation_indicators(hist, targets, csr),
                                  _pykernels.relation_indicators(hist, targets, csr))
            row["speedup"] = row["python_s"] / row["cython_s"]
            row["identical"] = bool(same)
        results[name] = row
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
