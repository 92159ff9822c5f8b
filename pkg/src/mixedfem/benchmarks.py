"""Structured meshes and problem definitions for the two plane-stress benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, MissingRun
from .material import PLANE_STRESS, MaterialParams
from .solver import AnalysisConfig, Dirichlet, Mesh, Problem, Traction

COOK_WIDTH = 48.0
COOK_LEFT_HEIGHT = 44.0
COOK_RIGHT_HEIGHT = 16.0
COOK_LOAD = 1.8
COOK_MATERIAL = dict(youngs_modulus=70.0, poisson_ratio=1.0 / 3.0, yield_stress=0.243, isotropic_hardening=0.2)

PLATE_HALF_WIDTH = 10.0
PLATE_HALF_HEIGHT = 18.0
PLATE_HOLE_RADIUS = 5.0
PLATE_DISPLACEMENT = 6.15
PLATE_MATERIAL = dict(youngs_modulus=70.0, poisson_ratio=0.2, yield_stress=0.243, isotropic_hardening=0.2)

BENCHMARKS = ("cook", "plate")


def structured_mesh(mapping, s_grid, t_grid, n_nodes: int = 4) -> Mesh:
    """Mesh of the image of ``[0,1]^2`` under ``mapping(s, t) -> (x, y)``.

    ``s_grid`` and ``t_grid`` are increasing parameter values including 0 and 1.
    Quadratic mid-nodes are mapped from parameter midpoints, so curved
    boundaries are followed exactly at the nodes. Boundary node and edge sets
    are labeled ``bottom`` (t=0), ``right`` (s=1), ``top`` (t=1), ``left`` (s=0).
    """
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    ns, nt = len(s_grid) - 1, len(t_grid) - 1
    quadratic = n_nodes == 8
    if quadratic:
        s_all = np.empty(2 * ns + 1)
        s_all[0::2], s_all[1::2] = s_grid, 0.5 * (s_grid[:-1] + s_grid[1:])
        t_all = np.empty(2 * nt + 1)
        t_all[0::2], t_all[1::2] = t_grid, 0.5 * (t_grid[:-1] + t_grid[1:])
    else:
        s_all, t_all = s_grid, t_grid
    ids = -np.ones((len(t_all), len(s_all)), dtype=np.int64)
    coords = []
    for j, t in enumerate(t_all):
        for i, s in enumerate(s_all):
            if quadratic and i % 2 == 1 and j % 2 == 1:
                continue
            ids[j, i] = len(coords)
            coords.append(mapping(s, t))
    step = 2 if quadratic else 1
    elements = []
    for b in range(nt):
        for a in range(ns):
            i, j = step * a, step * b
            corners = [ids[j, i], ids[j, i + step], ids[j + step, i + step], ids[j + step, i]]
            if quadratic:
                corners += [ids[j, i + 1], ids[j + 1, i + 2], ids[j + 2, i + 1], ids[j + 1, i]]
            elements.append(corners)

    def edge_sets(line):
        line = [n for n in line if n >= 0]
        if quadratic:
            return np.array([[line[k], line[k + 2], line[k + 1]] for k in range(0, len(line) - 1, 2)])
        return np.array([[line[k], line[k + 1]] for k in range(len(line) - 1)])

    lines = {"bottom": ids[0, :], "top": ids[-1, :], "left": ids[:, 0], "right": ids[:, -1]}
    node_sets = {k: np.array([n for n in v if n >= 0]) for k, v in lines.items()}
    return Mesh(np.array(coords), np.array(elements), node_sets, {k: edge_sets(v) for k, v in lines.items()})


# ---------------------------------------------------------------- Cook's membrane


def cook_map(s: float, t: float) -> tuple[float, float]:
    x = COOK_WIDTH * s
    y = COOK_LEFT_HEIGHT * s + t * (COOK_LEFT_HEIGHT + (COOK_RIGHT_HEIGHT - COOK_LEFT_HEIGHT) * s)
    return x, y


def mesh_cook(n: int, n_nodes: int = 4) -> Mesh:
    """n x n mesh of the tapered membrane; point A is the top-right corner."""
    if n < 1:
        raise ConfigError("refinement must be >= 1")
    grid = np.linspace(0.0, 1.0, n + 1)
    mesh = structured_mesh(cook_map, grid, grid, n_nodes)
    mesh.node_sets["clamped"] = mesh.node_sets["left"]
    mesh.node_sets["loaded"] = mesh.node_sets["right"]
    mesh.edge_sets["loaded"] = mesh.edge_sets["right"]
    mesh.node_sets["point_a"] = np.array([cook_point_a(mesh)])
    return mesh


def cook_point_a(mesh: Mesh) -> int:
    target = np.array([COOK_WIDTH, COOK_LEFT_HEIGHT + COOK_RIGHT_HEIGHT])
    return int(np.argmin(np.linalg.norm(mesh.nodes - target, axis=1)))


# ---------------------------------------------------------------- perforated plate


def _plate_outer(s: float) -> np.ndarray:
    """Outer path: up the right edge, then left along the top; arc-length parameter."""
    w, h = PLATE_HALF_WIDTH, PLATE_HALF_HEIGHT
    d = s * (w + h)
    if d <= h:
        return np.array([w, d])
    return np.array([w - (d - h), h])


def _plate_inner(s: float) -> np.ndarray:
    theta = 0.5 * np.pi * s
    return PLATE_HOLE_RADIUS * np.array([np.cos(theta), np.sin(theta)])


def plate_circumferential_grid(n_c: int) -> tuple[np.ndarray, np.ndarray]:
    """Parameters on the hole arc and on the outer path with the corner on a node."""
    w, h = PLATE_HALF_WIDTH, PLATE_HALF_HEIGHT
    n_right = min(max(1, int(round(n_c * h / (w + h)))), n_c - 1) if n_c > 1 else 1
    corner = h / (w + h)
    outer = np.concatenate([np.linspace(0.0, corner, n_right + 1),
                            np.linspace(corner, 1.0, n_c - n_right + 1)[1:]]) if n_c > 1 else np.array([0.0, 1.0])
    inner = np.linspace(0.0, 1.0, n_c + 1)
    return inner, outer


def geometric_grid(n: int, ratio: float) -> np.ndarray:
    sizes = ratio ** np.arange(n)
    return np.concatenate([[0.0], np.cumsum(sizes) / sizes.sum()])


def plate_grading_ratio(n_r: int, n_c: int) -> float:
    """Ratio making the mean innermost radial size equal the hole arc spacing."""
    if n_r == 1:
        return 1.0
    inner, outer = plate_circumferential_grid(n_c)
    mean_span = np.mean([np.linalg.norm(_plate_outer(b) - _plate_inner(a)) for a, b in zip(inner, outer)])
    arc = PLATE_HOLE_RADIUS * 0.5 * np.pi / n_c

    def gap(log_ratio):
        return geometric_grid(n_r, np.exp(log_ratio))[1] * mean_span - arc

    if gap(0.0) <= 0.0:
        return 1.0
    return float(np.exp(brentq(gap, 0.0, 5.0, xtol=1e-14)))


def mesh_plate(n_r: int, n_c: int, n_nodes: int = 4) -> Mesh:
    """Quarter plate around the hole: ``n_r`` radial by ``n_c`` circumferential elements."""
    if n_r < 1 or n_c < 1:
        raise ConfigError("refinement must be >= 1")
    inner, outer = plate_circumferential_grid(n_c)
    s_grid = np.linspace(0.0, 1.0, n_c + 1)
    t_grid = geometric_grid(n_r, plate_grading_ratio(n_r, n_c))

    def mapping(s, t):
        # s runs clockwise from the top so elements are counter-clockwise; the
        # piecewise-linear reparametrization keeps the outer corner on a node
        r = 1.0 - s
        return tuple((1 - t) * _plate_inner(np.interp(r, s_grid, inner)) + t * _plate_outer(np.interp(r, s_grid, outer)))

    mesh = structured_mesh(mapping, s_grid, t_grid, n_nodes)
    xy = mesh.nodes
    tol = 1e-9
    mesh.node_sets["symmetry_x"] = np.nonzero(np.abs(xy[:, 1]) < tol)[0]  # y = 0, u_y fixed
    mesh.node_sets["symmetry_y"] = np.nonzero(np.abs(xy[:, 0]) < tol)[0]  # x = 0, u_x fixed
    mesh.node_sets["top"] = np.nonzero(np.abs(xy[:, 1] - PLATE_HALF_HEIGHT) < tol)[0]
    mesh.node_sets["hole"] = mesh.node_sets["bottom"]
    return mesh


def inner_ring_aspect(mesh: Mesh, n_c: int) -> float:
    """Largest side-length ratio of the elements touching the hole."""
    worst = 0.0
    for corners in mesh.elements[:n_c, :4]:
        p = mesh.nodes[corners]
        sides = np.linalg.norm(p - np.roll(p, -1, axis=0), axis=1)
        worst = max(worst, sides.max() / sides.min())
    return worst


# ---------------------------------------------------------------- problem assembly


@dataclass(frozen=True)
class BenchmarkSpec:
    benchmark: str
    refinement: tuple
    element: str
    increments: int | None = None
    material: dict = field(default_factory=dict)
    hr_relaxed: bool = False
    cm_solver: str = "return_mapping"
    tol: float = 1e-8
    max_global_iter: int = 25

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"benchmark must be one of {BENCHMARKS}")
        ref = tuple(int(r) for r in np.atleast_1d(self.refinement))
        expected = 1 if self.benchmark == "cook" else 2
        if len(ref) != expected or min(ref) < 1:
            raise ConfigError(f"{self.benchmark} refinement needs {expected} positive integer(s)")
        object.__setattr__(self, "refinement", ref)
        from .elements import FORMULATIONS
        if self.element not in FORMULATIONS:
            raise ConfigError(f"unknown element {self.element!r}")
        if self.increments is not None and self.increments < 1:
            raise ConfigError("increments must be >= 1")

    @property
    def label(self) -> str:
        return "x".join(map(str, self.refinement))

    def material_params(self) -> MaterialParams:
        base = dict(COOK_MATERIAL if self.benchmark == "cook" else PLATE_MATERIAL)
        base.update(self.material)
        try:
            return MaterialParams(**base, plane_assumption=PLANE_STRESS)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def build_benchmark(spec: BenchmarkSpec) -> tuple[Problem, AnalysisConfig]:
    from .elements import get_formulation
    n_nodes = get_formulation(spec.element).n_nodes
    mat = spec.material_params()
    if spec.benchmark == "cook":
        mesh = mesh_cook(spec.refinement[0], n_nodes)
        a = int(mesh.node_sets["point_a"][0])
        problem = Problem(
            mesh, mat,
            dirichlet=(Dirichlet("clamped", 0), Dirichlet("clamped", 1)),
            tractions=(Traction("loaded", (0.0, 1.0 / COOK_RIGHT_HEIGHT)),),
            qoi_node=a, qoi_component=1, reaction_set="clamped", reaction_component=1,
            control_node=a, control_component=1,
        )
        config = AnalysisConfig(spec.element, spec.increments or 20, "load", COOK_LOAD, spec.tol,
                                spec.max_global_iter, hr_relaxed=spec.hr_relaxed, cm_solver=spec.cm_solver)
    else:
        n_r, n_c = spec.refinement
        mesh = mesh_plate(n_r, n_c, n_nodes)
        top = mesh.node_sets["top"]
        corner = int(top[np.argmax(mesh.nodes[top, 0])])
        problem = Problem(
            mesh, mat,
            dirichlet=(Dirichlet("symmetry_x", 1), Dirichlet("symmetry_y", 0), Dirichlet("top", 1, 1.0)),
            qoi_node=corner, qoi_component=1, reaction_set="top", reaction_component=1,
            control_node=corner, control_component=1,
        )
        config = AnalysisConfig(spec.element, spec.increments or 40, "displacement", PLATE_DISPLACEMENT,
                                spec.tol, spec.max_global_iter, hr_relaxed=spec.hr_relaxed, cm_solver=spec.cm_solver)
    return problem, config


def quantity_of_interest(spec: BenchmarkSpec, record) -> float:
    """Tip displacement for the membrane, top reaction for the plate."""
    return record.qoi_disp if spec.benchmark == "cook" else record.reaction


def convergence_table(results: dict) -> list[dict]:
    """Rows of final quantity vs refinement with relative delta to the finest run.

    ``results`` maps refinement label to (refinement size, final value) for one
    benchmark and element.
    """
    if not results:
        raise MissingRun("no completed runs to tabulate")
    ordered = sorted(results.items(), key=lambda kv: kv[1][0])
    finest = ordered[-1][1][1]
    rows = []
    for label, (size, value) in ordered:
        delta = None if len(ordered) == 1 else abs(value - finest) / abs(finest) if finest != 0 else None
        rows.append(dict(refine=label, size=size, value=value, rel_delta_to_finest=delta))
    return rows
