"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np
from scipy import sparse

from urqsim import _backend


def cases(gen: np.random.Generator):
    vals = gen.normal(size=64)
    norm = float(np.linalg.norm(vals))
    u = gen.random((100_000, vals.size))
    out = np.empty_like(u)
    probs = np.full(vals.size, 0.5)
    yield "sparsify 1e5x64", "sparsify", (vals, probs, u, out)
    yield "ternary 1e5x64", "ternary", (vals, norm, u, out)
    yield "lowprec s=4 1e5x64", "lowprec", (vals, norm, 4, u, out)

    for n, dim, k in ((64, 2000, 30), (3000, 20_000, 20), (20_000, 47_000, 10)):
        rows = [np.unique(gen.integers(0, dim, k)) for _ in range(n)]
        indptr = np.concatenate([[0], np.cumsum([r.size for r in rows])]).astype(np.int64)
        indices = np.concatenate(rows).astype(np.int64)
        yield f"conflict_degrees n={n} d={dim}", "conflict_degrees", (indptr, indices, dim)

    a = sparse.random(20_000, 5_000, density=0.002, format="csr", random_state=0)
    b = gen.normal(size=a.shape[0])
    x = gen.normal(size=a.shape[1])
    yield "csr_grad 2e4x5e3", "csr_grad", (a.indptr.astype(np.int64), a.indices.astype(np.int64),
                                           a.data, b, x, 1.0, 0.1, np.empty(a.shape[1]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _backend.available()
    mods = {n: _backend.load(n) for n in names}
    print(f"backends: {', '.join(names)}")
    print(f"{'kernel':<36}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn, fargs in cases(np.random.default_rng(0)):
        times = {}
        for n, mod in mods.items():
            f = getattr(mod, fn)
            times[n] = min(timeit.repeat(lambda: f(*fargs), number=1, repeat=args.repeat))
        row = f"{label:<36}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
