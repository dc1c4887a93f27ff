"""Compare the compiled and numpy similarity kernels.

Run ``python benchmarks/bench_kernels.py``.  Times the batched forward and
backward kernels at a few sizes, checks the backends agree, and times a
short training run with each backend swapped in.
"""
import argparse
import time
import timeit

import numpy as np

from glmsm import kernels
from glmsm.data import SynthSpec, generate_synthetic
from glmsm.model import build_model
from glmsm.train import TrainConfig, train

SIZES = [  # (B, d, k, K, p)
    (8, 16, 3, 4, 3),
    (32, 64, 5, 10, 5),
    (64, 256, 8, 20, 8),
]


def bench_kernel(impl, Z, V, W, sdot, need_gram, repeat):
    def run():
        _, C = impl.similarity_forward(Z, V, W)
        impl.similarity_backward(Z, V, C, sdot, need_gram)
    run()
    return min(timeit.repeat(run, number=1, repeat=repeat))


def bench_training(impl, epochs):
    saved = kernels.similarity_forward, kernels.similarity_backward
    kernels.similarity_forward, kernels.similarity_backward = impl.similarity_forward, impl.similarity_backward
    try:
        tr, _ = generate_synthetic(SynthSpec(16, 4, 40, 8, 3, 0.15, 42))
        model = build_model("glmsm-softmax", 16, 4, m=3, p=3, seed=42)
        start = time.perf_counter()
        res = train(tr, model, TrainConfig(epochs=epochs))
        return time.perf_counter() - start, res.model.bank.refs
    finally:
        kernels.similarity_forward, kernels.similarity_backward = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(sorted(backends))}")
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is timed")
    rng = np.random.default_rng(0)
    print(f"{'B':>4} {'d':>4} {'k':>3} {'K':>3} {'p':>3} {'mode':>9} " +
          " ".join(f"{name + ' ms':>11}" for name in sorted(backends)) + "   speedup")
    for B, d, k, K, p in SIZES:
        Z = rng.standard_normal((B, d, k))
        V = rng.standard_normal((K, d, p))
        sdot = rng.standard_normal((B, K))
        for mode, W in (("grassmann", V), ("euclidean", rng.standard_normal((K, d, p)))):
            need = mode == "euclidean"
            times = {name: bench_kernel(impl, Z, V, W, sdot, need, args.repeat) for name, impl in backends.items()}
            if len(backends) > 1:
                a = backends["python"].similarity_forward(Z, V, W)
                b = backends["cython"].similarity_forward(Z, V, W)
                assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
            speed = times["python"] / times["cython"] if "cython" in times else 1.0
            print(f"{B:>4} {d:>4} {k:>3} {K:>3} {p:>3} {mode:>9} " +
                  " ".join(f"{times[n] * 1e3:>11.3f}" for n in sorted(backends)) + f"   {speed:6.2f}x")
    print(f"\ntraining glmsm-softmax, d=16 C=4, {args.epochs} epochs:")
    results = {name: bench_training(impl, args.epochs) for name, impl in backends.items()}
    for name, (secs, _) in sorted(results.items()):
        print(f"  {name:>7}: {secs:.3f}s")
    if len(results) > 1:
        diff = np.max(np.abs(results["python"][1] - results["cython"][1]))
        print(f"  max |refs_python - refs_cython| = {diff:.2e}")


if __name__ == "__main__":
    main()
