"""Tip displacement at point A for every element over a Cook refinement sweep."""

import argparse
import time

from mixedfem.benchmarks import BenchmarkSpec, build_benchmark
from mixedfem.elements import BENCHMARK_ELEMENTS
from mixedfem.solver import run_analysis


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--refine", default="4,8,16,32")
    parser.add_argument("--elements", default=",".join(BENCHMARK_ELEMENTS))
    args = parser.parse_args()
    refs = [int(r) for r in args.refine.split(",")]
    print(f"{'element':8s}" + "".join(f"{'n=' + str(n):>12s}" for n in refs) + f"{'time':>9s}")
    for tag in args.elements.split(","):
        start = time.perf_counter()
        values = []
        for n in refs:
            result = run_analysis(*build_benchmark(BenchmarkSpec("cook", (n,), tag)))
            values.append(result.records[-1].qoi_disp if result.completed else float("nan"))
        row = "".join(f"{v:12.6f}" for v in values)
        print(f"{tag:8s}{row}{time.perf_counter() - start:8.1f}s", flush=True)


if __name__ == "__main__":
    main()
