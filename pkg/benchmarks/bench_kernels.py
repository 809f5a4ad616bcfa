"""Compare the compiled posting kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--postings 20000] [--side 5000] [--repeat 5]

Prints best-of-N wall time per kernel and backend, plus the speedup.
"""

from __future__ import annotations

import argparse
import os
import time

from vaultquery import kernels
from vaultquery.crypto import prf


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def workloads(postings: int, side: int) -> dict[str, callable]:
    token = prf(b"t" * 32, b"token")
    cell_key, mac_key = os.urandom(32), os.urandom(32)
    entries = [(0, i) for i in range(postings)]
    main = dict(kernels.encrypt_postings(token, cell_key, mac_key, entries))
    nonces = [os.urandom(kernels.SIDE_NONCE_BYTES) for _ in range(side)]
    side_addrs = [kernels.side_address(os.urandom(32), n) for n in nonces]
    cells = list(main.items())
    return {
        "encrypt_postings": lambda: kernels.encrypt_postings(token, cell_key, mac_key, entries),
        "probe_main": lambda: kernels.probe_main(main, token),
        "scan_side": lambda: kernels.scan_side(side_addrs, token),
        "open_cells": lambda: kernels.open_cells(cell_key, mac_key, cells),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--postings", type=int, default=20_000)
    parser.add_argument("--side", type=int, default=5_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available()
    results: dict[str, dict[str, float]] = {}
    for name in backends:
        kernels.use(name)
        for kernel, fn in workloads(args.postings, args.side).items():
            results.setdefault(kernel, {})[name] = best_of(fn, args.repeat)
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for kernel, row in results.items():
        line = f"{kernel:<18}" + "".join(f"{row[b] * 1e3:>10.2f}ms" for b in backends)
        if "native" in row:
            line += f"{row['python'] / row['native']:>11.1f}x"
        print(line)
    if "native" not in backends:
        print("compiled kernels not built; only the Python fallback was measured")


if __name__ == "__main__":
    main()
