"""Agreement and cost of the three element solvers for the complementary mixed element."""

import time

import numpy as np

from mixedfem.elements import build_operators, cm_state_ip, cm_state_return_map, cm_state_sqp, element_state
from mixedfem.elements import get_formulation, virgin_history
from mixedfem.material import MaterialParams

MATERIAL = MaterialParams(70.0, 1.0 / 3.0, 0.243, 0.2)
EPS_Y = 0.243 / 70.0


def random_states(n, seed=0):
    rng = np.random.default_rng(seed)
    base = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
    coords = base + rng.uniform(-0.35, 0.35, (n, 4, 2))
    ops = build_operators(get_formulation("CM-Q4"), coords, MATERIAL)
    u1 = rng.uniform(-1, 1, (n, 8)) * 3 * EPS_Y
    hist = element_state(u1, virgin_history(ops), ops).history
    return ops, hist, u1 + rng.uniform(-1, 1, (n, 8)) * 3 * EPS_Y


def main():
    ops, hist, u = random_states(200)
    ref = None
    for name, solver in (("return mapping", cm_state_return_map), ("interior point", cm_state_ip),
                         ("sqp", cm_state_sqp)):
        start = time.perf_counter()
        res = solver(u, hist, ops)
        elapsed = time.perf_counter() - start
        if ref is None:
            ref = res
        diff = np.abs(res.beta - ref.beta).max() / np.abs(ref.beta).max()
        same = np.mean(np.all(res.diagnostics["active"] == ref.diagnostics["active"], axis=1))
        print(f"{name:15s} {elapsed * 1e3:8.1f} ms  max rel beta diff {diff:.1e}  same active set {same:.0%}")


if __name__ == "__main__":
    main()
