"""Smallest inf-sup eigenvalue for a stable and a deficient stress space under each support choice."""

from mixedfem.benchmarks import BenchmarkSpec, build_benchmark
from mixedfem.stability import infsup_test

REFINEMENTS = (2, 4, 8)


def main():
    for tag in ("HR-Q4", "HR-Q4-3", "CM-Q4", "Q4"):
        problems = [build_benchmark(BenchmarkSpec("cook", (n,), tag))[0] for n in REFINEMENTS]
        for supports in ("benchmark", "minimal"):
            rep = infsup_test(problems, tag, [str(n) for n in REFINEMENTS], supports=supports)
            lams = "  ".join(f"{e.lambda_min:10.3e}" for e in rep.entries)
            print(f"{tag:8s} {supports:9s} {lams}  ratio {rep.ratio():6.3f}  "
                  f"{'unstable' if rep.unstable else 'stable'}")


if __name__ == "__main__":
    main()
