"""Element-level closest-point projection solvers.

The problem solved by all three methods is

    minimize  1/2 (x - x_tr)^T M (x - x_tr)   subject to  g_d(x) <= 0,

with convex ``g``. Its KKT point gives the stress parameters (and hardening
variables) of the complementary mixed element. The return mapping is batched
over elements; interior point and SQP work on one element at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ActiveSetCycling, NoConvergence

ConstraintFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class ProjectionProblem:
    metric: np.ndarray  # (N, n, n)
    x_trial: np.ndarray  # (N, n)
    constraints: ConstraintFn  # (x, element indices) -> g (N,D), dg (N,D,n), d2g (N,D,n,n)
    g_scale: np.ndarray  # (N, D) constraint scale
    r_scale: np.ndarray  # (N,) stationarity residual scale
    x_scale: np.ndarray  # (N,) typical magnitude of the unknowns

    @property
    def n_elements(self) -> int:
        return self.x_trial.shape[0]


@dataclass
class ProjectionSolution:
    x: np.ndarray  # (N, n)
    multipliers: np.ndarray  # (N, D), zero where inactive
    active: np.ndarray  # (N, D) bool
    iterations: np.ndarray  # (N,)


def _kkt_matrix(metric, l, dg, d2g, active):
    n = metric.shape[-1]
    d = dg.shape[1]
    h = metric + np.einsum("nd,ndij->nij", l, d2g)
    dga = dg * active[..., None]
    top = np.concatenate([h, np.swapaxes(dga, 1, 2)], axis=2)
    bottom = np.concatenate([dga, -np.eye(d) * (~active)[..., None, :]], axis=2)
    return np.concatenate([top, bottom], axis=1), n


def consistent_tangent(problem: ProjectionProblem, sol: ProjectionSolution, coupling: np.ndarray) -> np.ndarray:
    """Derivative ``dx/dy`` when ``M x_tr`` depends linearly on ``y`` through ``coupling``.

    Returns ``X`` solving the active-set KKT system with right-hand side ``coupling``.
    """
    idx = np.arange(problem.n_elements)
    _, dg, d2g = problem.constraints(sol.x, idx)
    mat, n = _kkt_matrix(problem.metric, sol.multipliers, dg, d2g, sol.active)
    rhs = np.concatenate([coupling, np.zeros((len(idx), dg.shape[1], coupling.shape[-1]))], axis=1)
    return np.linalg.solve(mat, rhs)[:, :n]


def return_mapping(problem: ProjectionProblem, tol: float = 1e-10, max_iter: int = 30,
                   max_sweeps: int = 20) -> ProjectionSolution:
    """Active-set return mapping with nested Newton iterations (batched)."""
    n_el = problem.n_elements
    idx_all = np.arange(n_el)
    x = problem.x_trial.copy()
    g, _, _ = problem.constraints(x, idx_all)
    d = g.shape[1]
    l = np.zeros((n_el, d))
    active = g > tol * problem.g_scale
    iterations = np.zeros(n_el, dtype=int)
    todo = np.any(active, axis=1)
    history: list[dict] = [dict() for _ in range(n_el)]
    union_tried = np.zeros(n_el, dtype=bool)
    for e in np.flatnonzero(todo):
        history[e][active[e].tobytes()] = 0
    sweep = 0
    while np.any(todo):
        sweep += 1
        if sweep > max_sweeps:
            bad = np.flatnonzero(todo)
            raise ActiveSetCycling([list(map(bool, active[e])) for e in bad[:1]])
        sel = np.flatnonzero(todo)
        act = active[sel]
        # later sweeps restart from the previous sweep's iterate
        xs = x[sel].copy()
        ls = np.where(act, np.maximum(l[sel], 0.0), 0.0)
        metric, xtr = problem.metric[sel], problem.x_trial[sel]
        gs, rs = problem.g_scale[sel], problem.r_scale[sel]
        live = np.ones(len(sel), dtype=bool)

        def residuals(xv, lv, rows):
            gv, dg, d2g = problem.constraints(xv, sel[rows])
            r1 = np.einsum("nij,nj->ni", metric[rows], xv - xtr[rows]) + np.einsum("nd,ndi->ni", lv * act[rows], dg)
            r2 = np.where(act[rows], gv, 0.0)
            merit = np.sum((r1 / rs[rows, None]) ** 2, axis=1) + np.sum((r2 / gs[rows]) ** 2, axis=1)
            return r1, r2, dg, d2g, merit

        r1, r2, dg, d2g, merit = residuals(xs, ls, np.arange(len(sel)))
        for it in range(max_iter + 1):
            ok = (np.linalg.norm(r1, axis=1) <= tol * rs) & np.all(np.abs(r2) <= tol * gs, axis=1)
            if it > 0:
                live &= ~ok
            if not np.any(live):
                break
            if it == max_iter:
                break
            rows = np.flatnonzero(live)
            mat, n = _kkt_matrix(metric[rows], ls[rows] * act[rows], dg[rows], d2g[rows], act[rows])
            rhs = -np.concatenate([r1[rows], r2[rows]], axis=1)
            step = np.linalg.solve(mat, rhs[..., None])[..., 0]
            # backtracking on the scaled KKT residual; full steps near the solution
            t = np.ones(len(rows))
            for _ in range(20):
                xt = xs[rows] + t[:, None] * step[:, :n]
                lt = np.where(act[rows], ls[rows] + t[:, None] * step[:, n:], 0.0)
                trial = residuals(xt, lt, rows)
                worse = trial[4] > (1.0 - 1e-4 * t) * merit[rows]
                if not np.any(worse):
                    break
                t = np.where(worse, 0.5 * t, t)
            xs[rows], ls[rows] = xt, lt
            r1[rows], r2[rows], dg[rows], d2g[rows], merit[rows] = trial
            iterations[sel[rows]] += 1
        stalled = live
        gv, _, _ = problem.constraints(xs, sel)
        x[sel], l[sel] = xs, ls
        bad_l = act & (ls < 0)
        bad_g = ~act & (gv > tol * gs)
        settled = ~np.any(bad_l | bad_g, axis=1) & ~stalled
        new_active = (~act & (gv > tol * gs)) | (act & (ls > 0))
        for k in np.flatnonzero(stalled):
            # no KKT point on this set: release the site whose multiplier is most negative
            neg = act[k] & (ls[k] < 0)
            if not np.any(neg):
                raise NoConvergence("element return mapping", max_iter, float(np.sqrt(merit[k])))
            new_active[k] = act[k].copy()
            new_active[k, np.argmin(np.where(neg, ls[k], np.inf))] = False
        for k, e in enumerate(sel):
            if settled[k]:
                todo[e] = False
                continue
            if stalled[k]:
                # a set whose Newton loop stalled may be revisited from a better start
                history[e].pop(act[k].tobytes(), None)
            key = new_active[k].tobytes()
            if key in history[e]:
                if union_tried[e]:
                    raise ActiveSetCycling([list(map(bool, act[k])), list(map(bool, new_active[k]))])
                union_tried[e] = True
                new_active[k] = new_active[k] | act[k]
            history[e][new_active[k].tobytes()] = sweep
            active[e] = new_active[k]
            if not np.any(active[e]):
                x[e] = problem.x_trial[e]
                l[e] = 0.0
                todo[e] = False
    l = np.where(active, np.maximum(l, 0.0), 0.0)
    return ProjectionSolution(x, l, active, iterations)


# ---------------------------------------------------------------- single-element helpers


def _normalized(problem: ProjectionProblem, e: int):
    """Dimensionless metric and constraints for element ``e``."""
    metric = problem.metric[e]
    xtr = problem.x_trial[e]
    gsc = problem.g_scale[e]
    fs = problem.x_scale[e] ** 2 * np.trace(metric) / len(xtr)

    def cons(x):
        g, dg, d2g = problem.constraints(x[None], np.array([e]))
        return g[0] / gsc, dg[0] / gsc[:, None], d2g[0] / gsc[:, None, None]

    return metric / fs, xtr, cons, fs / gsc


def interior_point(problem: ProjectionProblem, e: int, variant: str = "simplified",
                   eps_lambda: float = 1e-12, theta: float = 0.95, eta: float = 0.5,
                   tol: float = 1e-12, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Primal-dual interior point for one element.

    Slacks ``s`` turn the constraints into equalities; complementarity is
    imposed as ``s_i l_i = mu``. The simplified variant keeps ``mu = 0`` and
    clamps multipliers and slacks at small floors after every full Newton step.
    Returns (x, multipliers, active, iterations).
    """
    metric, xtr, cons, to_physical = _normalized(problem, e)
    eps_s = 1e3 * eps_lambda
    n = len(xtr)
    x = xtr.copy()
    g, _, _ = cons(x)
    m = len(g)
    s = np.maximum(-g, 1.0)
    l = np.ones(m)
    mu = eta * float(s @ l) / m if variant == "barrier" else 0.0
    for it in range(1, max_iter + 1):
        g, dg, d2g = cons(x)
        h = metric + np.einsum("d,dij->ij", l, d2g)
        rx = metric @ (x - xtr) + dg.T @ l
        rg = g + s
        rc = s * l - mu
        if variant == "simplified":
            # the slack floor keeps g + s away from zero; test the KKT conditions directly,
            # treating multipliers sitting on their floor as zero
            l_eff = np.where(l > eps_lambda, l, 0.0)
            rx_eff = metric @ (x - xtr) + dg.T @ l_eff
            conv = np.max(np.abs(rx_eff)) <= tol and np.max(np.abs(np.minimum(-g, l_eff))) <= tol
        else:
            conv = (np.max(np.abs(rx)) <= tol and np.max(np.abs(rg)) <= tol
                    and float(s @ l) / m <= tol)
        if conv:
            break
        kkt = np.zeros((n + 2 * m, n + 2 * m))
        kkt[:n, :n] = h
        kkt[:n, n:n + m] = dg.T
        kkt[n:n + m, :n] = dg
        kkt[n:n + m, n + m:] = np.eye(m)
        kkt[n + m:, n:n + m] = np.diag(s)
        kkt[n + m:, n + m:] = np.diag(l)
        step = np.linalg.solve(kkt, -np.concatenate([rx, rg, rc]))
        dx, dl, ds = step[:n], step[n:n + m], step[n + m:]
        if variant == "simplified":
            x, l, s = x + dx, np.maximum(l + dl, eps_lambda), np.maximum(s + ds, eps_s)
        else:
            alpha_max = 1.0
            for v, dv in ((l, dl), (s, ds)):
                neg = dv < 0
                if np.any(neg):
                    alpha_max = min(alpha_max, float(np.min(-v[neg] / dv[neg])))
            alpha = min(1.0, theta * alpha_max)
            x, l, s = x + alpha * dx, l + alpha * dl, s + alpha * ds
            mu = eta * float(s @ l) / m
    else:
        raise NoConvergence("interior point", max_iter, float(np.max(np.abs(rx))))
    active = l > s if variant == "barrier" else -g <= l
    return x, np.where(active, l * to_physical, 0.0), active, it


def dual_active_set_qp(hess: np.ndarray, lin: np.ndarray, cmat: np.ndarray, rhs: np.ndarray,
                       tol: float = 1e-13, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Strictly convex QP  min 1/2 x^T H x + a^T x  s.t.  C^T x >= b  (dual active set).

    Starts from the unconstrained minimum and adds violated constraints one at a
    time while keeping dual feasibility. Returns (x, multipliers).
    """
    n, m = cmat.shape
    hinv = np.linalg.inv(hess)
    x = -hinv @ lin
    active: list[int] = []
    u = np.zeros(0)
    cnorm = np.linalg.norm(cmat, axis=0) + 1e-300
    for _ in range(max_iter):
        slack = (cmat.T @ x - rhs) / cnorm
        cand = [i for i in range(m) if i not in active and slack[i] < -tol]
        if not cand:
            mult = np.zeros(m)
            mult[active] = u
            return x, mult
        p = min(cand, key=lambda i: slack[i])
        u_plus = np.append(u, 0.0)
        while True:
            npv = cmat[:, p]
            if active:
                nmat = cmat[:, active]
                gram = nmat.T @ hinv @ nmat
                nstar = np.linalg.solve(gram, nmat.T @ hinv)
                z = hinv @ npv - hinv @ nmat @ (nstar @ npv)
                r = nstar @ npv
            else:
                z = hinv @ npv
                r = np.zeros(0)
            t1, drop = np.inf, None
            for j, rj in enumerate(r):
                if rj > 1e-14 and u_plus[j] / rj < t1:
                    t1, drop = u_plus[j] / rj, j
            zn = float(z @ npv)
            t2 = np.inf if np.linalg.norm(z) <= 1e-14 * np.linalg.norm(npv) * np.linalg.norm(hinv) \
                else -(npv @ x - rhs[p]) / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                raise NoConvergence("dual active-set QP (infeasible)", 0, float(-slack[p]))
            if np.isinf(t2):
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                del active[drop]
                u_plus = np.delete(u_plus, drop)
                continue
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t == t2:
                active.append(p)
                u = u_plus
                break
            del active[drop]
            u_plus = np.delete(u_plus, drop)
    raise NoConvergence("dual active-set QP", max_iter, 0.0)


def sqp(problem: ProjectionProblem, e: int, hessian: str = "lagrangian", tol: float = 1e-12,
        max_iter: int = 500) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Sequential quadratic programming with an l1 merit line search, one element.

    Each step solves the QP with the constraints linearized at the iterate. The
    QP Hessian is the metric ("elastic") or the Lagrangian Hessian ("lagrangian").
    """
    metric, xtr, cons, to_physical = _normalized(problem, e)
    x = xtr.copy()
    mu = None
    rho = 1.0

    def merit(xv, rho_):
        gv, _, _ = cons(xv)
        dx = xv - xtr
        return 0.5 * dx @ metric @ dx + rho_ * np.sum(np.maximum(gv, 0.0))

    for it in range(1, max_iter + 1):
        g, dg, d2g = cons(x)
        hq = metric if hessian == "elastic" or mu is None else metric + np.einsum("d,dij->ij", mu, d2g)
        grad = metric @ (x - xtr)
        step, mu = dual_active_set_qp(hq, grad, -dg.T, g)
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(x))) and np.max(g) <= tol:
            break
        rho = max(rho, 2.0 * float(np.max(mu, initial=0.0)))
        phi0 = merit(x, rho)
        slope = grad @ step - rho * np.sum(np.maximum(g, 0.0))
        floor = 1e-14 * max(abs(phi0), 1.0)
        if merit(x + step, rho) > phi0 + 1e-4 * min(slope, 0.0) + floor:
            # second-order correction against the Maratos effect
            g_trial, _, _ = cons(x + step)
            corrected, _ = dual_active_set_qp(hq, grad, -dg.T, g_trial - dg @ step)
            if merit(x + corrected, rho) <= phi0 + 1e-4 * min(slope, 0.0) + floor:
                step = corrected
        t = 1.0
        while merit(x + t * step, rho) > phi0 + 1e-4 * t * min(slope, 0.0) + floor and t > 1e-10:
            t *= 0.5
        x = x + t * step
    else:
        raise NoConvergence("SQP", max_iter, float(np.max(np.abs(step))))
    g, _, _ = cons(x)
    active = mu > 0
    return x, mu * to_physical, active, it
