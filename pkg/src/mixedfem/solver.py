"""Incremental-iterative global driver with sparse assembly and Newton iterations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .elements import ElementHistory, build_operators, element_state, get_formulation, virgin_history
from .elements.operators import ElementOperators
from .errors import ElementFailure, GlobalNoConvergence, MixedFemError
from .interpolation import gauss_1d
from .material import MaterialParams

log = logging.getLogger(__name__)

CONTROL_MODES = ("load", "displacement")


@dataclass(frozen=True)
class Mesh:
    """Quadrilateral mesh.

    ``edge_sets`` map a label to an array (n_edges, 2 or 3) of node ids ordered
    along the edge, mid-node last for quadratic edges.
    """

    nodes: np.ndarray
    elements: np.ndarray
    node_sets: dict = field(default_factory=dict)
    edge_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=np.int64))
        if self.elements.ndim != 2 or self.elements.shape[1] not in (4, 8):
            raise ValueError("elements must be (N, 4) or (N, 8)")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def nodes_per_element(self) -> int:
        return self.elements.shape[1]

    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    def element_dofs(self) -> np.ndarray:
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(len(e), -1)


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed displacement ``component`` on a node set: value = amplitude * scale."""

    node_set: str
    component: int
    scale: float = 0.0


@dataclass(frozen=True)
class Traction:
    """Uniform traction (force per unit length) on an edge set, per unit amplitude."""

    edge_set: str
    traction: tuple[float, float]


@dataclass(frozen=True)
class Problem:
    mesh: Mesh
    material: MaterialParams
    dirichlet: tuple[Dirichlet, ...]
    tractions: tuple[Traction, ...] = ()
    qoi_node: int | None = None
    qoi_component: int = 1
    reaction_set: str | None = None
    reaction_component: int = 1
    control_node: int | None = None
    control_component: int = 1


@dataclass(frozen=True)
class AnalysisConfig:
    element: str
    increments: int = 20
    control: str = "load"
    amplitude: float = 1.0
    tol: float = 1e-8
    max_global_iter: int = 25
    max_bisections: int = 4
    hr_relaxed: bool = False
    cm_solver: str = "return_mapping"
    predictor: bool = True
    element_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.increments < 1:
            raise ValueError("increments must be >= 1")
        if self.control not in CONTROL_MODES:
            raise ValueError(f"control must be one of {CONTROL_MODES}")
        if self.max_global_iter < 1 or self.tol <= 0:
            raise ValueError("invalid Newton controls")

    def formulation(self):
        opts = dict(self.element_options)
        base = get_formulation(self.element)
        if base.algorithm == "hr":
            opts.setdefault("hr_relaxed", self.hr_relaxed)
        if base.algorithm == "cm":
            opts.setdefault("cm_solver", self.cm_solver)
        return get_formulation(self.element, **opts)


@dataclass
class GlobalState:
    u: np.ndarray
    history: ElementHistory
    load_factor: float = 0.0
    reactions: np.ndarray | None = None  # residual at constrained DOFs
    beta_iterate: np.ndarray | None = None
    last_increment: np.ndarray | None = None  # displacement change of the previous step
    last_step: float = 0.0  # load-factor change of the previous step


@dataclass
class AnalysisRecord:
    step: int
    load_factor: float
    control_disp: float
    reaction: float
    qoi_disp: float
    global_iters: int
    residual_log: list = field(default_factory=list)
    substeps: int = 1
    max_yield: float = 0.0
    max_complementarity: float = 0.0


# ---------------------------------------------------------------- boundary data


def _edge_shape(n_edge_nodes: int, s: np.ndarray) -> np.ndarray:
    if n_edge_nodes == 2:
        return np.stack([0.5 * (1 - s), 0.5 * (1 + s)], axis=-1)
    return np.stack([0.5 * s * (s - 1), 0.5 * s * (s + 1), 1 - s * s], axis=-1)


def _edge_shape_derivative(n_edge_nodes: int, s: np.ndarray) -> np.ndarray:
    if n_edge_nodes == 2:
        return np.stack([np.full_like(s, -0.5), np.full_like(s, 0.5)], axis=-1)
    return np.stack([s - 0.5, s + 0.5, -2 * s], axis=-1)


def consistent_edge_loads(mesh: Mesh, edge_set: str, traction) -> np.ndarray:
    """Nodal forces equivalent to a uniform traction on an edge set."""
    edges = np.asarray(mesh.edge_sets[edge_set])
    f = np.zeros(mesh.n_dofs)
    pts, wts = gauss_1d(3)
    n = _edge_shape(edges.shape[1], pts)
    dn = _edge_shape_derivative(edges.shape[1], pts)
    t = np.asarray(traction, dtype=float)
    for edge in edges:
        xy = mesh.nodes[edge]
        length = np.linalg.norm(dn @ xy, axis=1)
        nodal = (wts * length) @ n
        for k, node in enumerate(edge):
            f[2 * node:2 * node + 2] += nodal[k] * t
    return f


class Model:
    """Operators, DOF bookkeeping and sparse assembly for one problem and formulation."""

    def __init__(self, problem: Problem, config: AnalysisConfig):
        self.problem = problem
        self.config = config
        self.formulation = config.formulation()
        mesh = problem.mesh
        if mesh.nodes_per_element != self.formulation.n_nodes:
            raise ValueError(f"{self.formulation.tag} needs {self.formulation.n_nodes}-node elements")
        self.ops: ElementOperators = build_operators(self.formulation, mesh.element_coords(), problem.material)
        self.edofs = mesh.element_dofs()
        n = mesh.n_dofs
        self.n_dofs = n
        fixed = {}
        for bc in problem.dirichlet:
            for node in np.asarray(mesh.node_sets[bc.node_set]):
                fixed[2 * int(node) + bc.component] = bc.scale
        self.fixed = np.array(sorted(fixed), dtype=np.int64)
        self.fixed_scale = np.array([fixed[d] for d in self.fixed])
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.nonzero(mask)[0]
        self.f_unit = np.zeros(n)
        for tr in problem.tractions:
            self.f_unit += consistent_edge_loads(mesh, tr.edge_set, tr.traction)
        self._sparsity()

    def _sparsity(self):
        n_el, n_u = self.edofs.shape
        rows = np.repeat(self.edofs, n_u, axis=1).ravel()
        cols = np.tile(self.edofs, (1, n_u)).ravel()
        # sorted unique keys row * n + col are already in CSR order
        uniq, self._scatter = np.unique(rows * self.n_dofs + cols, return_inverse=True)
        self._n_nz = len(uniq)
        self._csr_indices = uniq % self.n_dofs
        self._csr_indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // self.n_dofs, minlength=self.n_dofs))])

    def virgin_state(self) -> GlobalState:
        return GlobalState(np.zeros(self.n_dofs), virgin_history(self.ops))

    def external_force(self, load_factor: float) -> np.ndarray:
        if self.config.control == "load":
            return load_factor * self.config.amplitude * self.f_unit
        return np.zeros(self.n_dofs)

    def prescribed(self, load_factor: float) -> np.ndarray:
        if self.config.control == "displacement":
            return load_factor * self.config.amplitude * self.fixed_scale
        return np.zeros(len(self.fixed))

    def assemble(self, u, history: ElementHistory, load_factor: float, beta_iterate=None):
        """Returns (residual, sparse tangent, element result)."""
        ue = u[self.edofs]
        try:
            res = element_state(ue, history, self.ops, beta_iterate)
        except MixedFemError as exc:
            raise ElementFailure(None, exc) from exc
        q_el = res.q_modified if res.q_modified is not None else res.q_int
        q = np.bincount(self.edofs.ravel(), weights=q_el.ravel(), minlength=self.n_dofs)
        data = np.bincount(self._scatter, weights=res.stiffness.ravel(), minlength=self._n_nz)
        k = sp.csr_matrix((data, self._csr_indices, self._csr_indptr),
                          shape=(self.n_dofs, self.n_dofs))
        return q - self.external_force(load_factor), k, res


def assemble(model: Model, state: GlobalState, load_factor: float | None = None):
    lf = state.load_factor if load_factor is None else load_factor
    return model.assemble(state.u, state.history, lf, state.beta_iterate)


# ---------------------------------------------------------------- Newton


def _line_search(model: Model, u, du, r0, history, target, beta_it, max_eval: int = 6):
    """Step length along ``du`` from the projected residual ``du . r(u + t du)``.

    The global residual is the gradient of an incremental potential, so a sign
    change of the projected residual brackets the minimizer along the line.
    """
    free = model.free
    s0 = float(du @ r0[free])
    lo, s_lo = 0.0, s0
    hi, s_hi = None, None
    t = 1.0
    best = None
    for _ in range(max_eval):
        step = np.zeros_like(u)
        step[free] = t * du
        try:
            r, k, res = model.assemble(u + step, history, target, beta_it)
        except ElementFailure:
            hi, s_hi = t, None
            t = 0.5 * (lo + t)
            continue
        st = float(du @ r[free])
        best = (t, r, k, res)
        if s0 >= 0.0 or abs(st) <= 0.5 * abs(s0) or (st < 0.0 and t == 1.0):
            return best
        if st > 0.0:
            hi, s_hi = t, st
        else:
            lo, s_lo = t, st
        if s_hi is None:
            t = 0.5 * (lo + hi)
        else:
            t = lo - s_lo * (hi - lo) / (s_hi - s_lo)
            t = min(max(t, lo + 0.1 * (hi - lo)), hi - 0.1 * (hi - lo))
    if best is None:
        raise ElementFailure(None, RuntimeError("line search found no admissible step"))
    return best


def _newton(model: Model, state: GlobalState, target: float):
    """Newton iterations with line search to ``target`` load factor from a committed state."""
    cfg = model.config
    u = state.u.copy()
    if cfg.predictor and state.last_increment is not None and state.last_step > 0.0:
        u += (target - state.load_factor) / state.last_step * state.last_increment
    u[model.fixed] = model.prescribed(target)
    beta_it = state.history.beta.copy() if model.formulation.hr_relaxed else None
    free = model.free
    f_ext = model.external_force(target)
    log_r = []
    r_ref = np.linalg.norm(f_ext[free]) if cfg.control == "load" else None
    iters = 0
    mat = model.problem.material
    floor = mat.yield_stress * np.sqrt(np.sum(model.ops.area ** 2)) * 1e-8
    s_scale = mat.yield_stress ** 2 / mat.youngs_modulus * model.ops.area.max()
    r, k, res = model.assemble(u, state.history, target, beta_it)
    while True:
        if r_ref is None:
            r_ref = np.linalg.norm(r[model.fixed])
        ref = max(r_ref, floor)
        norm = float(np.linalg.norm(r[free]))
        log_r.append(norm / ref)
        converged = norm <= cfg.tol * ref
        if res.stress_residual is not None:
            converged = converged and float(np.max(np.abs(res.stress_residual))) <= cfg.tol * s_scale
        if converged and (iters > 0 or norm == 0.0):
            return u, res, r, iters, log_r
        if iters >= cfg.max_global_iter or not np.isfinite(norm):
            raise GlobalNoConvergence(None, log_r)
        try:
            du = splu(k[free][:, free].tocsc()).solve(-r[free])
        except RuntimeError as exc:
            raise GlobalNoConvergence(None, log_r) from exc
        if beta_it is not None:
            # the relaxed residual is not a gradient; take full steps
            u[free] += du
            beta_it = res.beta
            r, k, res = model.assemble(u, state.history, target, beta_it)
        else:
            t, r, k, res = _line_search(model, u, du, r, state.history, target, beta_it)
            u[free] += t * du
        iters += 1


def kkt_audit(result, material: MaterialParams) -> tuple[float, float]:
    """Largest normalized yield value and multiplier-yield product over all sites."""
    phi = np.asarray(result.yield_values)
    lam = np.asarray(result.multipliers)
    sy = material.yield_stress
    max_yield = float(np.max(phi, initial=-np.inf)) / sy
    compl = float(np.max(np.abs(lam * phi), initial=0.0)) / sy
    return max_yield, compl


def solve_increment(model: Model, state: GlobalState, step: int, target: float) -> tuple[GlobalState, AnalysisRecord]:
    """Advance to ``target`` load factor, bisecting the step on failure."""
    cfg = model.config

    def advance(st: GlobalState, goal: float, depth: int):
        try:
            u, res, r, iters, log_r = _newton(model, st, goal)
            new = GlobalState(u, res.history, goal, r[model.fixed].copy(), None, u - st.u, goal - st.load_factor)
            return new, iters, log_r, 1, [kkt_audit(res, model.problem.material)]
        except (GlobalNoConvergence, ElementFailure) as exc:
            if depth >= cfg.max_bisections:
                if isinstance(exc, GlobalNoConvergence):
                    raise GlobalNoConvergence(step, exc.residual_log) from exc
                raise
            log.info("step %d: bisecting (depth %d)", step, depth + 1)
            mid = 0.5 * (st.load_factor + goal)
            s1, i1, l1, n1, a1 = advance(st, mid, depth + 1)
            s2, i2, l2, n2, a2 = advance(s1, goal, depth + 1)
            return s2, i1 + i2, l1 + l2, n1 + n2, a1 + a2

    new, iters, log_r, n_sub, audits = advance(state, target, 0)
    # every committed substep counts towards the audit
    max_yield = max(a[0] for a in audits)
    compl = max(a[1] for a in audits)
    rec = AnalysisRecord(step, target, *_observables(model, new), iters, log_r, n_sub, max_yield, compl)
    return new, rec


def _observables(model: Model, state: GlobalState) -> tuple[float, float, float]:
    p = model.problem
    ctrl = 0.0
    if p.control_node is not None:
        ctrl = float(state.u[2 * p.control_node + p.control_component])
    reaction = 0.0
    if p.reaction_set is not None and state.reactions is not None:
        nodes = np.asarray(p.mesh.node_sets[p.reaction_set])
        dofs = 2 * nodes + p.reaction_component
        pos = np.searchsorted(model.fixed, dofs)
        reaction = float(np.sum(state.reactions[pos]))
    qoi = 0.0
    if p.qoi_node is not None:
        qoi = float(state.u[2 * p.qoi_node + p.qoi_component])
    return ctrl, reaction, qoi


@dataclass
class AnalysisResult:
    records: list
    state: GlobalState
    model: Model
    failure: Exception | None = None

    @property
    def completed(self) -> bool:
        return self.failure is None


def run_analysis(problem: Problem, config: AnalysisConfig, model: Model | None = None) -> AnalysisResult:
    """Equal increments from zero to the target amplitude.

    Stops at the first unrecoverable failure and returns the partial records
    together with the exception.
    """
    model = model or Model(problem, config)
    state = model.virgin_state()
    records = []
    for step in range(1, config.increments + 1):
        try:
            state, rec = solve_increment(model, state, step, step / config.increments)
        except (GlobalNoConvergence, ElementFailure) as exc:
            log.warning("analysis stopped at step %d: %s", step, exc)
            return AnalysisResult(records, state, model, exc)
        records.append(rec)
        log.debug("step %d: %d iterations, qoi %.6e", step, rec.global_iters, rec.qoi_disp)
    return AnalysisResult(records, state, model)


__all__ = [
    "AnalysisConfig", "AnalysisRecord", "AnalysisResult", "Dirichlet", "GlobalState", "Mesh", "Model",
    "Problem", "Traction", "assemble", "consistent_edge_loads", "kkt_audit", "run_analysis",
    "solve_increment"
]
