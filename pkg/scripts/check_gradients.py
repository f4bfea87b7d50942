#!/usr/bin/env python3
"""Compare analytic network gradients against central finite
differences and print the worst relative error per architecture.

Exit status is non-zero if any architecture misses the tolerance.
"""
import argparse
import sys
import time

import numpy as np

from trackcast.neural import NetworkConfig, grad_check


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--archs", default="lstm,gru,cnn",
                    help="comma-separated subset of lstm,gru,cnn")
    ap.add_argument("--hidden-size", type=int, default=8)
    ap.add_argument("--kernel-count", type=int, default=4)
    ap.add_argument("--kernel-width", type=int, default=3)
    ap.add_argument("--window-len", type=int, default=6)
    ap.add_argument("--n-features", type=int, default=4)
    ap.add_argument("--batch", type=int, default=6)
    ap.add_argument("--l2-lambda", type=float, default=1e-4)
    ap.add_argument("--step", type=float, default=1e-5)
    ap.add_argument("--tolerance", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    windows = rng.normal(size=(args.batch, args.window_len, args.n_features))
    targets = rng.normal(size=args.batch)

    failed = False
    for arch in [a.strip() for a in args.archs.split(",") if a.strip()]:
        cfg = NetworkConfig(
            arch=arch,
            hidden_size=args.hidden_size,
            kernel_count=args.kernel_count,
            kernel_width=args.kernel_width,
            l2_lambda=args.l2_lambda,
            seed=args.seed,
        )
        t0 = time.perf_counter()
        worst = grad_check(cfg, windows, targets, step=args.step)
        elapsed = time.perf_counter() - t0
        verdict = "ok" if worst < args.tolerance else "FAIL"
        print(f"{arch:5s}  max relative error {worst:.3e}  ({elapsed:.2f}s)  {verdict}")
        failed = failed or worst >= args.tolerance
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
