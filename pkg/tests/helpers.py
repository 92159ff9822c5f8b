"""Element fixtures shared by the element and acceptance suites."""

from __future__ import annotations

import numpy as np

from mixedfem.elements import build_operators, element_state, get_formulation, virgin_history
from mixedfem.material import MaterialParams

COOK = MaterialParams(70.0, 1.0 / 3.0, 0.243, 0.2)
EPS_Y = 0.243 / 70.0
Q4_BASE = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])


def with_midsides(q4):
    return np.vstack([q4, 0.5 * (q4 + np.roll(q4, -1, axis=0))])


def random_geometry(rng, n_nodes, jitter=0.35):
    q4 = Q4_BASE + rng.uniform(-jitter, jitter, Q4_BASE.shape)
    return q4 if n_nodes == 4 else with_midsides(q4)


def linear_field(coords, grad, shift=(0.0, 0.0)):
    """Nodal vector of u(x) = grad @ x + shift."""
    return (coords @ np.asarray(grad).T + np.asarray(shift)).ravel()


def random_displacement(rng, coords, strain_level):
    grad = rng.uniform(-1, 1, (2, 2)) * strain_level * EPS_Y
    noise = rng.uniform(-1, 1, coords.size) * 0.3 * strain_level * EPS_Y
    return linear_field(coords, grad) + noise


def operators(tag, coords, material=COOK, **options):
    return build_operators(get_formulation(tag, **options), coords, material)


def committed_state(tag, rng, strain_level=3.0, material=COOK, **options):
    """Random distorted element with a plastic committed history and a new trial displacement."""
    form = get_formulation(tag, **options)
    coords = random_geometry(rng, form.n_nodes)
    ops = build_operators(form, coords, material)
    u1 = random_displacement(rng, coords, strain_level)
    first = element_state(u1[None], virgin_history(ops), ops)
    u2 = u1 + random_displacement(rng, coords, strain_level)
    return ops, first.history, u2


def fd_stiffness(ops, hist, u, rel_step=1e-7):
    step = rel_step * max(np.linalg.norm(u), EPS_Y)
    n = u.size
    kfd = np.zeros((n, n))
    for j in range(n):
        d = np.zeros(n)
        d[j] = step
        qp = element_state((u + d)[None], hist, ops).q_int[0]
        qm = element_state((u - d)[None], hist, ops).q_int[0]
        kfd[:, j] = (qp - qm) / (2 * step)
    return kfd


def near_switch(result, ops, rel=1e-4) -> bool:
    """True when some site sits close to the elastic/plastic switch, where the map has a kink."""
    sy = ops.material.yield_stress
    lam = np.abs(np.asarray(result.multipliers))
    phi = np.asarray(result.yield_values)
    lam_scale = rel * EPS_Y * float(np.max(ops.area))
    inactive_close = (lam == 0) & (phi > -rel * sy)
    small_active = (lam > 0) & (lam < lam_scale)
    return bool(np.any(inactive_close) or np.any(small_active))


ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Store the outcome line printed in the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    print(ACCEPTANCE[number])
