"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--prompts 20000] [--candidates 8] [--repeat 5]

Both backends are imported side by side from ``creamlab._kernels``; the
``CREAMLAB_DISABLE_NUMBA`` flag only decides which one the package binds.
"""

import argparse
import timeit

import numpy as np

from creamlab import _kernels as k


def cases(rewards, j, q, probs, a, b):
    yield "rank_rows", lambda: k.rank_rows_numpy(rewards), lambda: k.rank_rows_numba(rewards)
    yield "kendall_rows", lambda: k.kendall_rows_numpy(j, q), lambda: k.kendall_rows_numba(j, q)
    yield "spearman_rows", lambda: k.spearman_rows_numpy(j, q), lambda: k.spearman_rows_numba(j, q)
    yield "toporder_rows", lambda: k.toporder_rows_numpy(j, q), lambda: k.toporder_rows_numba(j, q)
    yield ("disagreement_mass", lambda: k.disagreement_mass_numpy(probs, a, b),
           lambda: k.disagreement_mass_numba(probs, a, b))


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--prompts", type=int, default=20000)
    parser.add_argument("--candidates", type=int, default=8)
    parser.add_argument("--vocab", type=int, default=64, help="response-space size for disagreement_mass")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not k.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    rewards = np.ascontiguousarray(rng.normal(size=(args.prompts, args.candidates)))
    j = k.rank_rows_numpy(rewards)
    q = k.rank_rows_numpy(rng.normal(size=rewards.shape))
    probs = rng.dirichlet(np.ones(args.vocab))
    a, b = rng.normal(size=args.vocab), rng.normal(size=args.vocab)

    print(f"{args.prompts} prompts x {args.candidates} candidates, vocab {args.vocab}, best of {args.repeat}")
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, numpy_fn, numba_fn in cases(rewards, j, q, probs, a, b):
        numba_fn()  # compile outside the timed region
        t_np = min(timeit.repeat(numpy_fn, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(numba_fn, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
