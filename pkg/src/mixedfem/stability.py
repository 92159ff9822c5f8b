"""Numerical stability checks: element kernel ranks and the generalized-eigenvalue inf-sup test."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import eigsh, splu

from . import interpolation as ip
from .elements import build_operators, get_formulation
from .elements.formulation import ElementFormulation
from .errors import EigensolverFailure
from .material import MaterialParams
from .solver import AnalysisConfig, Mesh, Model, Problem

DENSE_LIMIT = 2000
RANK_TOL = 1e-10
N_RIGID = 3


def domain_diameter(mesh: Mesh) -> float:
    xy = mesh.nodes
    hull = xy[np.unique(np.concatenate([np.argmin(xy, 0), np.argmax(xy, 0)]))]
    return float(max(np.linalg.norm(xy - p, axis=1).max() for p in hull))


def assemble_vnorm(mesh: Mesh, length_scale: float | None = None, quad_order: int = 3) -> sp.csr_matrix:
    """Full H1 norm matrix  int(u.v + L^2 grad u : grad v)  with L the domain diameter by default."""
    scale = domain_diameter(mesh) if length_scale is None else float(length_scale)
    pts, wts = ip.gauss_2d(quad_order)
    edofs = mesh.element_dofs()
    n_u = edofs.shape[1]
    blocks = np.empty((len(edofs), n_u, n_u))
    for e, xy in enumerate(mesh.element_coords()):
        shape = ip.shape_for(xy, pts)
        w = wts * shape.det_j
        nmat = ip.n_matrix(shape)  # (Q, 2, n_u)
        grad = shape.physical_gradients  # (Q, 2, n)
        mass = np.einsum("q,qim,qin->mn", w, nmat, nmat)
        lap = np.einsum("q,qka,qkb->ab", w, grad, grad)
        stiff = np.zeros((n_u, n_u))
        stiff[0::2, 0::2] = lap
        stiff[1::2, 1::2] = lap
        blocks[e] = mass + scale ** 2 * stiff
    rows = np.repeat(edofs, n_u, axis=1).ravel()
    cols = np.tile(edofs, (1, n_u)).ravel()
    t = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return (0.5 * (t + t.T)).tocsr()


def elastic_stiffness(problem: Problem, element: str, **options) -> sp.csr_matrix:
    """Statically condensed elastic stiffness through the solver's own assembly path."""
    model = Model(problem, AnalysisConfig(element, element_options=options))
    state = model.virgin_state()
    _, k, _ = model.assemble(state.u, state.history, 0.0)
    return k


def smallest_eigenvalues(k, t, n_eig: int = 6) -> np.ndarray:
    """Ascending smallest eigenvalues of the symmetric-definite pencil (K, T)."""
    n = k.shape[0]
    n_eig = min(n_eig, n)
    try:
        if n <= DENSE_LIMIT:
            vals = sla.eigh(_dense(k), _dense(t), eigvals_only=True, subset_by_index=[0, n_eig - 1])
        else:
            vals = eigsh(sp.csc_matrix(k), k=n_eig, M=sp.csc_matrix(t), sigma=-1e-8 * _norm(k) / _norm(t),
                         which="LM", return_eigenvectors=False)
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    return np.sort(np.real(vals))


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a)


def _norm(a) -> float:
    return float(sp.linalg.norm(a) if sp.issparse(a) else np.linalg.norm(a))


def sampled_infsup(k, t, n_samples: int = 200, n_refine: int = 3, seed: int = 0) -> float:
    """Upper estimate of the inf-sup constant by sampling and local minimization.

    Minimizes  sqrt(v'K T^-1 K v / v'T v)  from the best random samples.
    """
    k = sp.csr_matrix(k)
    t = sp.csc_matrix(t)
    tinv = splu(t)
    rng = np.random.default_rng(seed)
    n = k.shape[0]

    def quotient(v):
        kv = k @ v
        return float(kv @ tinv.solve(kv)) / float(v @ (t @ v))

    def objective(v):
        kv = k @ v
        y = tinv.solve(kv)
        num = float(kv @ y)
        tv = t @ v
        den = float(v @ tv)
        grad = 2.0 * (k.T @ y) / den - 2.0 * num / den ** 2 * tv
        return num / den, grad

    samples = rng.standard_normal((n_samples, n))
    values = np.array([quotient(v) for v in samples])
    best = np.inf
    for idx in np.argsort(values)[:n_refine]:
        # the quotient is tiny in absolute terms, so stop on stagnation only
        res = minimize(objective, samples[idx], jac=True, method="L-BFGS-B",
                       options=dict(maxiter=20000, maxcor=50, gtol=1e-30, ftol=1e-30))
        best = min(best, res.fun, values[idx])
    return float(np.sqrt(max(best, 0.0)))


@dataclass
class MeshStability:
    label: str
    mesh_h: float
    lambda_min: float
    eigenvalues: np.ndarray
    zero_floor: float
    rank_c: int | None
    flag: str
    sampled: float | None = None


@dataclass
class StabilityReport:
    element: str
    entries: list = field(default_factory=list)
    unstable: bool = False

    def ratio(self) -> float:
        first, last = self.entries[0].lambda_min, self.entries[-1].lambda_min
        return last / first if first != 0 else np.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mesh_h", "lambda_min", "rank_C", "flag"])
            for e in self.entries:
                w.writerow([f"{e.mesh_h:.12e}", f"{e.lambda_min:.12e}", "" if e.rank_c is None else e.rank_c, e.flag])


def mesh_size(mesh: Mesh) -> float:
    corners = mesh.nodes[mesh.elements[:, :4]]
    return float(np.max(np.linalg.norm(corners - np.roll(corners, -1, axis=1), axis=2)))


def minimal_supports(mesh: Mesh) -> np.ndarray:
    """Three statically determinate DOFs that remove rigid motion and nothing else."""
    a = 0
    d = np.linalg.norm(mesh.nodes - mesh.nodes[a], axis=1)
    b = int(np.argmax(d))
    direction = mesh.nodes[b] - mesh.nodes[a]
    # fix the component at b that is most nearly perpendicular to the line a-b
    comp = 0 if abs(direction[0]) < abs(direction[1]) else 1
    return np.array([2 * a, 2 * a + 1, 2 * b + comp])


SUPPORTS = ("benchmark", "minimal", "none")


def infsup_test(problems: list, element: str, labels=None, supports: str = "benchmark",
                length_scale: float | None = None, n_samples: int = 0, **options) -> StabilityReport:
    """Smallest eigenvalue of K v = lambda T v over a sequence of refined problems.

    ``supports`` selects the constrained space: the problem's own boundary
    conditions, three statically determinate DOFs, or nothing. The sequence is
    flagged unstable when the smallest eigenvalue decays monotonically by more
    than a factor 10 (a reporting heuristic).
    """
    if supports not in SUPPORTS:
        raise ValueError(f"supports must be one of {SUPPORTS}")
    report = StabilityReport(element)
    labels = labels or [str(i) for i in range(len(problems))]
    for label, problem in zip(labels, problems):
        k = elastic_stiffness(problem, element, **options)
        t = assemble_vnorm(problem.mesh, length_scale)
        if supports == "benchmark":
            free = Model(problem, AnalysisConfig(element, element_options=options)).free
        elif supports == "minimal":
            free = np.setdiff1d(np.arange(problem.mesh.n_dofs), minimal_supports(problem.mesh))
        else:
            free = np.arange(problem.mesh.n_dofs)
        k, t = k[free][:, free], t[free][:, free]
        vals = smallest_eigenvalues(k, t)
        floor = 1e-10 * _norm(k) / _norm(t)
        lam = float(vals[0])
        flag = "zero" if abs(lam) <= floor else ("negative" if lam < 0 else "ok")
        kc = kernel_check(get_formulation(element, **options), problem.mesh.element_coords()[0], problem.material)
        sampled = sampled_infsup(k, t, n_samples) if n_samples else None
        report.entries.append(MeshStability(label, mesh_size(problem.mesh), lam, vals, floor,
                                            kc.rank_c, flag, sampled))
    lams = np.array([e.lambda_min for e in report.entries])
    decaying = len(lams) > 1 and np.all(np.diff(lams) < 0) and lams[-1] < 0.1 * lams[0]
    report.unstable = bool(decaying or np.any([e.flag != "ok" for e in report.entries]))
    if report.unstable:
        for e in report.entries:
            if e.flag == "ok":
                e.flag = "decay"
    return report


# ---------------------------------------------------------------- element kernels


@dataclass
class KernelReport:
    tag: str
    n_u: int
    n_rigid: int
    n_sigma: int
    n_strain: int | None
    n_enhanced: int | None
    rank_c: int | None
    spurious_modes: int | None
    rank_stacked: int | None
    count_ok: bool | None
    rank_ok: bool | None
    vacuous: bool = False
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.vacuous or bool(self.count_ok and self.rank_ok)


def numerical_rank(a: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(np.atleast_2d(a), compute_uv=False)
    return int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0


def kernel_check(form: ElementFormulation | str, coords, material: MaterialParams | None = None) -> KernelReport:
    """Ranks of the element coupling operators and the necessary dimension counts."""
    if isinstance(form, str):
        form = get_formulation(form)
    material = material or MaterialParams(1.0, 0.3, 1.0, 0.1)
    ops = build_operators(form, coords, material)
    n_u = ops.n_u
    base = dict(tag=form.tag, n_u=n_u, n_rigid=N_RIGID, n_sigma=ops.n_sigma, n_strain=None, n_enhanced=None,
                rank_c=None, spurious_modes=None, rank_stacked=None, count_ok=None, rank_ok=None)
    alg = form.algorithm
    if alg in ("displacement", "es"):
        n_enh = None if ops.enhanced is None else ops.enhanced.shape[-1]
        base.update(n_enhanced=n_enh)
        note = ("stress eliminated by orthogonality; the stress condition is immaterial"
                if alg == "es" else "no stress field")
        return KernelReport(**base, vacuous=True, notes=note)
    c = ops.c[0]
    rank_c = numerical_rank(c)
    spurious = n_u - N_RIGID - rank_c
    base.update(rank_c=rank_c, spurious_modes=spurious)
    if alg in ("hr", "cm"):
        count_ok = n_u - N_RIGID <= ops.n_sigma
        return KernelReport(**base | dict(count_ok=count_ok, rank_ok=spurious == 0))
    if alg == "hw_nodal_force":
        areas = ops.sub_areas[0]
        g = (areas[:, None, None] * ops.sbar[0]).reshape(-1, ops.n_sigma)  # piecewise-constant strains
    else:
        g = ops.g[0]
    n_strain = g.shape[0]
    stacked = np.vstack([g, c.T])
    rank_stacked = numerical_rank(stacked)
    count_ok = n_u - N_RIGID <= ops.n_sigma <= n_strain + n_u - N_RIGID
    return KernelReport(**base | dict(n_strain=n_strain, rank_stacked=rank_stacked, count_ok=count_ok,
                                      rank_ok=spurious == 0 and rank_stacked == ops.n_sigma))
