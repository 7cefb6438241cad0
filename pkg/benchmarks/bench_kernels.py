"""Time one training iteration (forward, backward, edge gradient) per kernel backend.

    python benchmarks/bench_kernels.py --blocks 8 16 16 16 4 --k 100 --batch 32
"""

import argparse
import time

import numpy as np

from dnw.engine import NeuralGraph, backward, edge_grads, forward
from dnw.graph import select_edges
from dnw.kernels import backend_module


def time_backend(model, edges, X, y, backend, repeats):
    best = {"forward": np.inf, "backward": np.inf, "edge_grad": np.inf}
    for _ in range(repeats):
        t0 = time.perf_counter()
        state, _ = forward(model, edges, X, backend=backend)
        t1 = time.perf_counter()
        backward(model, state, y, backend=backend)
        t2 = time.perf_counter()
        edge_grads(model, state, backend=backend)
        t3 = time.perf_counter()
        for name, dt in zip(best, (t1 - t0, t2 - t1, t3 - t2)):
            best[name] = min(best[name], dt)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--blocks", type=int, nargs="+", default=[8, 16, 16, 16, 4])
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    model = NeuralGraph.build({"blocks": args.blocks, "k": args.k, "seed": args.seed}, 2, 2)
    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((2, args.batch))
    y = rng.integers(0, 2, args.batch)
    edges = select_edges(model.store)

    try:
        backend_module("cython")
        backends = ["python", "cython"]
    except ImportError:
        print("compiled extension not built; timing the fallback only")
        backends = ["python"]
    results = {b: time_backend(model, edges, X, y, b, args.repeats) for b in backends}
    print(f"graph {args.blocks}, k={args.k}, batch={args.batch}, best of {args.repeats}")
    print(f"{'kernel':>10s} " + " ".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name in ("forward", "backward", "edge_grad"):
        row = [results[b][name] * 1e3 for b in backends]
        speed = f"{row[0] / row[-1]:8.1f}x" if len(row) > 1 else ""
        print(f"{name:>10s} " + " ".join(f"{ms:10.3f}ms" for ms in row) + f"  {speed}")


if __name__ == "__main__":
    main()
