"""Top-edge reaction histories of the perforated plate for the mixed elements."""

import argparse
import time

from mixedfem.benchmarks import BenchmarkSpec, build_benchmark
from mixedfem.elements import MIXED_ELEMENTS
from mixedfem.solver import run_analysis


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--refine", default="6x12", help="n_r x n_c, e.g. 19x38")
    parser.add_argument("--elements", default=",".join(MIXED_ELEMENTS))
    parser.add_argument("--every", type=int, default=5, help="print every k-th increment")
    args = parser.parse_args()
    ref = tuple(int(p) for p in args.refine.split("x"))
    finals = {}
    for tag in args.elements.split(","):
        start = time.perf_counter()
        result = run_analysis(*build_benchmark(BenchmarkSpec("plate", ref, tag)))
        print(f"# {tag}: completed={result.completed} ({time.perf_counter() - start:.1f} s)")
        for rec in result.records[args.every - 1::args.every]:
            print(f"{tag:8s} u={rec.control_disp:8.4f} R={rec.reaction:12.8f} iters={rec.global_iters}")
        if result.completed:
            finals[tag] = result.records[-1].reaction
    if finals:
        lo, hi = min(finals.values()), max(finals.values())
        print(f"final reactions spread: {(hi - lo) / lo:.4%}")


if __name__ == "__main__":
    main()
