"""Backend benchmark: compiled core versus the pure-numpy fallback.

Times the three kernel entry points on the default architecture and checks
that both backends agree numerically. Run as:

    python -m bootstab.benchmark [--n 3200] [--epochs 20] [--batch-size 128]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import backend
from .model import Architecture, init_params
from .rng import make_rng


def _setup(n: int, p: int, hidden: tuple[int, ...], pool_size: int, seed: int):
    rng = make_rng(seed)
    arch = Architecture(input_dim=p, hidden_dims=hidden)
    flat = init_params(arch, seed).to_flat()
    X = rng.standard_normal((n, p))
    y = rng.integers(0, 2, n).astype(np.float64)
    cache_t = np.log(np.clip(rng.random((n, pool_size)), 1e-7, 1 - 1e-7))
    return arch, flat, X, y, cache_t


def _time(fn, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n: int = 3200, epochs: int = 20, batch_size: int = 128,
                  pool_size: int = 200, subsample_size: int = 100, seed: int = 0) -> dict:
    arch, flat, X, y, cache_t = _setup(n, 15, (64, 32), pool_size, seed)
    dims = np.asarray(arch.dims, dtype=np.int64)
    rng = make_rng(seed + 1)
    perms = np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    steps = epochs * (-(-n // batch_size))
    subs = np.argsort(rng.random((steps, pool_size)), axis=1)[:, :subsample_size].astype(np.int64)
    adam = (batch_size, 1e-3, 0.9, 0.999, 1e-8, 1e-7)

    names = backend.available_backends()
    results: dict = {"backends": names, "steps": steps, "n": n, "epochs": epochs}
    outputs = {}
    for name in names:
        kern = backend.get_kernel(name)
        r: dict = {}
        r["forward_s"] = _time(lambda: kern.forward_logits(flat, dims, X))
        r["train_plain_s"] = _time(
            lambda: kern.train_loop(flat, dims, X, y, 0.0, None, perms, None, *adam), repeats=1
        )
        r["train_penalised_s"] = _time(
            lambda: kern.train_loop(flat, dims, X, y, 0.1, cache_t, perms, subs, *adam), repeats=1
        )
        outputs[name] = kern.train_loop(flat, dims, X, y, 0.1, cache_t, perms, subs, *adam)[0]
        results[name] = r
    if len(names) == 2:
        results["max_param_diff"] = float(np.abs(outputs[names[0]] - outputs[names[1]]).max())
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=3200)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--pool-size", type=int, default=200)
    parser.add_argument("--subsample-size", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    res = run_benchmark(args.n, args.epochs, args.batch_size, args.pool_size,
                        args.subsample_size, args.seed)
    names = res["backends"]
    steps = res["steps"]
    print(f"active backend: {backend.NAME}; available: {', '.join(names)}")
    print(f"{res['n']} rows, {res['epochs']} epochs, {steps} optimiser steps\n")
    print(f"{'kernel':<22}" + "".join(f"{n:>14}" for n in names) + ("{:>10}".format("speedup") if len(names) == 2 else ""))
    for key, label in (
        ("forward_s", "forward (full set)"),
        ("train_plain_s", "train, lambda = 0"),
        ("train_penalised_s", "train, penalised"),
    ):
        row = f"{label:<22}"
        for n in names:
            row += f"{res[n][key] * 1e3:>12.1f}ms"
        if len(names) == 2:
            row += f"{res[names[1]][key] / res[names[0]][key]:>9.2f}x"
        print(row)
    if "max_param_diff" in res:
        print(f"\nfinal-parameter agreement between backends: max |diff| = {res['max_param_diff']:.3e}")
    if len(names) == 1:
        print("\n(compiled core not built; only the numpy fallback was timed)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
