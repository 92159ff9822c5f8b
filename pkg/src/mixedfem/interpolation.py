"""Element interpolation: shape functions, stress, strain, enhanced and multiplier bases.

All evaluators work on a single element and accept a batch of parent points
``(Q, 2)``. Matrices are returned with the point axis first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateElement, RankDeficientFilter

# ---------------------------------------------------------------- quadrature


def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule; points ordered with xi running fastest."""
    x, w = gauss_1d(n)
    xi, eta = np.meshgrid(x, x, indexing="xy")
    ww = np.outer(w, w)
    return np.column_stack([xi.ravel(), eta.ravel()]), ww.ravel()


def composite_rule(m: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """m x m equal parent subsquares, each with an n x n Gauss rule.

    Returns parent points, parent weights and the subsquare index of each point.
    """
    pts, w = gauss_2d(n)
    h = 2.0 / m
    all_pts, all_w, owner = [], [], []
    for j in range(m):
        for i in range(m):
            centre = np.array([-1.0 + h * (i + 0.5), -1.0 + h * (j + 0.5)])
            all_pts.append(centre + 0.5 * h * pts)
            all_w.append(w * (0.5 * h) ** 2)
            owner.append(np.full(len(w), j * m + i))
    return np.vstack(all_pts), np.concatenate(all_w), np.concatenate(owner)


# ---------------------------------------------------------------- shape functions


@dataclass(frozen=True)
class ParentPoint:
    xi: float
    eta: float

    def __post_init__(self):
        if not (-1.0 <= self.xi <= 1.0 and -1.0 <= self.eta <= 1.0):
            raise ValueError("parent point outside [-1, 1]^2")

    def as_array(self) -> np.ndarray:
        return np.array([[self.xi, self.eta]])


@dataclass(frozen=True)
class ShapeEval:
    """Shape data at one or more parent points.

    ``jacobian[q]`` holds rows ``(dx/dxi, dy/dxi)`` and ``(dx/deta, dy/deta)``.
    ``parent_gradients`` and ``physical_gradients`` have shape ``(Q, 2, n)``.
    """

    values: np.ndarray
    parent_gradients: np.ndarray
    jacobian: np.ndarray
    det_j: np.ndarray
    physical_gradients: np.ndarray
    points: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[-1]


Q4_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
Q8_NODES = np.vstack([Q4_CORNERS, [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]])


def q4_functions(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi, eta = pts[:, 0:1], pts[:, 1:2]
    sx, sy = Q4_CORNERS[:, 0], Q4_CORNERS[:, 1]
    n = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    dxi = 0.25 * sx * (1 + sy * eta)
    deta = 0.25 * sy * (1 + sx * xi)
    return n, np.stack([dxi, deta], axis=1)


def q8_functions(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi, eta = pts[:, 0:1], pts[:, 1:2]
    sx, sy = Q4_CORNERS[:, 0], Q4_CORNERS[:, 1]
    nc = 0.25 * (1 + sx * xi) * (1 + sy * eta) * (sx * xi + sy * eta - 1)
    dc_xi = 0.25 * sx * (1 + sy * eta) * (2 * sx * xi + sy * eta)
    dc_eta = 0.25 * sy * (1 + sx * xi) * (sx * xi + 2 * sy * eta)
    one = np.ones_like(xi)
    # mid-sides: 5 (eta=-1), 6 (xi=+1), 7 (eta=+1), 8 (xi=-1)
    nm = np.hstack([
        0.5 * (1 - xi**2) * (1 - eta),
        0.5 * (1 + xi) * (1 - eta**2),
        0.5 * (1 - xi**2) * (1 + eta),
        0.5 * (1 - xi) * (1 - eta**2),
    ])
    dm_xi = np.hstack([-xi * (1 - eta), 0.5 * (1 - eta**2) * one, -xi * (1 + eta), -0.5 * (1 - eta**2) * one])
    dm_eta = np.hstack([-0.5 * (1 - xi**2) * one, -(1 + xi) * eta, 0.5 * (1 - xi**2) * one, -(1 - xi) * eta])
    n = np.hstack([nc, nm])
    return n, np.stack([np.hstack([dc_xi, dm_xi]), np.hstack([dc_eta, dm_eta])], axis=1)


def _as_points(p) -> np.ndarray:
    if isinstance(p, ParentPoint):
        return p.as_array()
    return np.atleast_2d(np.asarray(p, dtype=float))


def _shape(coords: np.ndarray, p, funcs: Callable, n_nodes: int) -> ShapeEval:
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (n_nodes, 2):
        raise ValueError(f"expected {n_nodes} node coordinates")
    pts = _as_points(p)
    n, dn = funcs(pts)
    jac = dn @ coords  # rows: d(x,y)/dxi, d(x,y)/deta
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(det <= 0):
        raise DegenerateElement(f"non-positive Jacobian determinant {det.min():.3e}")
    dphys = np.linalg.solve(jac, dn)
    return ShapeEval(n, dn, jac, det, dphys, pts)


def shape_q4(coords, p) -> ShapeEval:
    """Bilinear shape functions; nodes counter-clockwise."""
    return _shape(coords, p, q4_functions, 4)


def shape_q8(coords, p) -> ShapeEval:
    """Serendipity shape functions; corner nodes 1-4 then mid-sides 5-8."""
    return _shape(coords, p, q8_functions, 8)


def shape_for(coords, p) -> ShapeEval:
    return shape_q4(coords, p) if len(coords) == 4 else shape_q8(coords, p)


def b_matrix(shape: ShapeEval) -> np.ndarray:
    """Symmetric-gradient operator with engineering shear; DOFs ordered (u1, v1, u2, v2, ...)."""
    dx = shape.physical_gradients[:, 0, :]
    dy = shape.physical_gradients[:, 1, :]
    q, n = dx.shape
    b = np.zeros((q, 3, 2 * n))
    b[:, 0, 0::2] = dx
    b[:, 1, 1::2] = dy
    b[:, 2, 0::2] = dy
    b[:, 2, 1::2] = dx
    return b


def n_matrix(shape: ShapeEval) -> np.ndarray:
    q, n = shape.values.shape
    m = np.zeros((q, 2, 2 * n))
    m[:, 0, 0::2] = shape.values
    m[:, 1, 1::2] = shape.values
    return m


def geometry_coefficients(coords) -> tuple[float, float, float, float, float, float]:
    """(a1, a2, a3, b1, b2, b3) of the bilinear map built from the corner nodes."""
    x, y = np.asarray(coords, dtype=float)[:4].T
    a1 = 0.25 * (-x[0] + x[1] + x[2] - x[3])
    a2 = 0.25 * (x[0] - x[1] + x[2] - x[3])
    a3 = 0.25 * (-x[0] - x[1] + x[2] + x[3])
    b1 = 0.25 * (-y[0] + y[1] + y[2] - y[3])
    b2 = 0.25 * (y[0] - y[1] + y[2] - y[3])
    b3 = 0.25 * (-y[0] - y[1] + y[2] + y[3])
    return a1, a2, a3, b1, b2, b3


# ---------------------------------------------------------------- stress bases


@dataclass(frozen=True)
class ElementFrame:
    """Local Cartesian frame: origin, orthonormal axes (columns) and a length scale."""

    origin: np.ndarray
    axes: np.ndarray
    length: float

    def to_local(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy) - self.origin) @ self.axes / self.length


def element_frame(coords) -> ElementFrame:
    """Centroid of the nodes plus principal axes of their scatter."""
    xy = np.asarray(coords, dtype=float)
    origin = xy.mean(axis=0)
    d = xy - origin
    _, vecs = np.linalg.eigh(d.T @ d)
    e1 = vecs[:, 1]
    k = np.argmax(np.abs(e1))
    e1 = e1 * np.sign(e1[k])
    axes = np.column_stack([e1, [-e1[1], e1[0]]])
    length = float(np.sqrt(np.max(np.sum(d * d, axis=1))))
    return ElementFrame(origin, axes, length)


def stress_rotation(axes: np.ndarray) -> np.ndarray:
    """Voigt matrix mapping local stress components to global ones."""
    r = axes
    return np.array([
        [r[0, 0] ** 2, r[0, 1] ** 2, 2 * r[0, 0] * r[0, 1]],
        [r[1, 0] ** 2, r[1, 1] ** 2, 2 * r[1, 0] * r[1, 1]],
        [r[0, 0] * r[1, 0], r[0, 1] * r[1, 1], r[0, 0] * r[1, 1] + r[0, 1] * r[1, 0]],
    ])


def strain_transform(a: np.ndarray) -> np.ndarray:
    """Voigt (engineering shear) matrix of the tensor map eps -> A eps A^T."""
    return np.array([
        [a[0, 0] ** 2, a[0, 1] ** 2, a[0, 0] * a[0, 1]],
        [a[1, 0] ** 2, a[1, 1] ** 2, a[1, 0] * a[1, 1]],
        [2 * a[0, 0] * a[1, 0], 2 * a[0, 1] * a[1, 1], a[0, 0] * a[1, 1] + a[0, 1] * a[1, 0]],
    ])


StressEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StressBasis:
    """Stress interpolation ``sigma = S beta``.

    ``evaluate(parent_pts, phys_pts)`` returns ``(Q, 3, n_modes)``.
    The first three modes are the constant stress states.
    """

    n_modes: int
    evaluate: StressEvaluator
    frame: ElementFrame | None = None
    self_equilibrated: bool = False
    divergence: StressEvaluator | None = None


def pian_sumihara_basis(coords) -> StressBasis:
    """Five-mode assumed stress for Q4 (constant states plus two linear modes)."""
    a1, _, a3, b1, _, b3 = geometry_coefficients(coords)
    det0 = a1 * b3 - a3 * b1
    if det0 <= 0:
        raise DegenerateElement("degenerate Q4 geometry")

    def evaluate(parent, phys):
        xi, eta = parent[:, 0], parent[:, 1]
        s = np.zeros((len(parent), 3, 5))
        s[:, 0, 0] = s[:, 1, 1] = s[:, 2, 2] = 1.0
        s[:, :, 3] = np.outer(eta, [a1 * a1, b1 * b1, a1 * b1])
        s[:, :, 4] = np.outer(xi, [a3 * a3, b3 * b3, a3 * b3])
        return s

    return StressBasis(5, evaluate)


def constant_stress_basis() -> StressBasis:
    """Three constant modes only (deliberately rank deficient on Q4)."""

    def evaluate(parent, phys):
        return np.broadcast_to(np.eye(3), (len(parent), 3, 3)).copy()

    return StressBasis(3, evaluate, self_equilibrated=True,
                       divergence=lambda parent, phys: np.zeros((len(parent), 2, 3)))


def natural_linear_basis() -> StressBasis:
    """Nine modes: each Cartesian component complete linear in (xi, eta)."""

    def evaluate(parent, phys):
        q = len(parent)
        s = np.zeros((q, 3, 9))
        for c in range(3):
            s[:, c, c] = 1.0
            s[:, c, 3 + c] = parent[:, 0]
            s[:, c, 6 + c] = parent[:, 1]
        return s

    return StressBasis(9, evaluate)


# Airy modes as monomial lists per stress component: (coef, power_x, power_y)
def _airy_family(k: int, family: int) -> tuple[list, list, list]:
    if family == 0:
        return [(1.0, 0, k)], [], []
    if family == 1:
        return [], [(1.0, k, 0)], []
    if family == 2:
        return [], [(float(k), k - 1, 1)], [(-1.0, k, 0)]
    if family == 3:
        return [(float(k), 1, k - 1)], [], [(-1.0, 0, k)]
    raise ValueError("family index in 0..3")


def airy_mode_list(max_degree: int, extra: Sequence[tuple[int, int]] = ()) -> list:
    modes = [([(1.0, 0, 0)], [], []), ([], [(1.0, 0, 0)], []), ([], [], [(1.0, 0, 0)])]
    for k in range(1, max_degree + 1):
        modes += [_airy_family(k, f) for f in range(4)]
    modes += [_airy_family(k, f) for k, f in extra]
    return modes


def _monomials(terms, x, y, dx=0, dy=0):
    out = np.zeros_like(x)
    for coef, px, py in terms:
        c = coef
        if dx:
            if px == 0:
                continue
            c, px = c * px, px - 1
        if dy:
            if py == 0:
                continue
            c, py = c * py, py - 1
        out = out + c * x**px * y**py
    return out


def airy_basis(max_degree: int, frame: ElementFrame | None = None,
               extra: Sequence[tuple[int, int]] = ()) -> StressBasis:
    """Self-equilibrated polynomial stress modes, complete to ``max_degree``.

    ``extra`` appends chosen higher-degree modes as ``(degree, family)`` pairs,
    families ordered ``{y^k;0;0}, {0;x^k;0}, {0;k x^(k-1) y;-x^k}, {k x y^(k-1);0;-y^k}``.
    Evaluation happens in the scaled local frame and is rotated to global components.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    frame = frame or ElementFrame(np.zeros(2), np.eye(2), 1.0)
    modes = airy_mode_list(max_degree, extra)
    rot = stress_rotation(frame.axes)

    def local(phys, dx=0, dy=0):
        xl = frame.to_local(phys)
        x, y = xl[:, 0], xl[:, 1]
        s = np.zeros((len(phys), 3, len(modes)))
        for j, comps in enumerate(modes):
            for c, terms in enumerate(comps):
                s[:, c, j] = _monomials(terms, x, y, dx, dy)
        return s

    def evaluate(parent, phys):
        return rot @ local(np.atleast_2d(phys))

    def divergence(parent, phys):
        phys = np.atleast_2d(phys)
        sx, sy = local(phys, dx=1), local(phys, dy=1)
        div = np.stack([sx[:, 0] + sy[:, 2], sx[:, 2] + sy[:, 1]], axis=1)
        # vectors rotate with the frame axes; derivatives carry the length scale
        return np.einsum("ij,qjm->qim", frame.axes, div) / frame.length

    return StressBasis(len(modes), evaluate, frame, True, divergence)


# ---------------------------------------------------------------- Pian filter


@dataclass(frozen=True)
class AuxMode:
    """Scalar parent-coordinate field; it generates one displacement mode per direction."""

    gradient: Callable[[np.ndarray], np.ndarray]  # (Q,2) -> (Q,2) derivatives in xi, eta


WILSON_MODES = (
    AuxMode(lambda p: np.column_stack([-2.0 * p[:, 0], np.zeros(len(p))])),
    AuxMode(lambda p: np.column_stack([np.zeros(len(p)), -2.0 * p[:, 1]])),
)

BUBBLE_MODE = AuxMode(lambda p: np.column_stack([
    -2.0 * p[:, 0] * (1 - p[:, 1] ** 2), -2.0 * p[:, 1] * (1 - p[:, 0] ** 2)]))


def aux_strain_matrix(modes: Sequence[AuxMode], shape: ShapeEval) -> np.ndarray:
    """Exact symmetric gradients of the auxiliary displacement modes, (Q, 3, 2 n_aux)."""
    q = len(shape.points)
    out = np.zeros((q, 3, 2 * len(modes)))
    for k, mode in enumerate(modes):
        g = np.linalg.solve(shape.jacobian, mode.gradient(shape.points)[:, :, None])[:, :, 0]
        out[:, 0, 2 * k] = g[:, 0]
        out[:, 2, 2 * k] = g[:, 1]
        out[:, 1, 2 * k + 1] = g[:, 1]
        out[:, 2, 2 * k + 1] = g[:, 0]
    return out


def _null_space(a: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, int]:
    if a.size == 0:
        return np.eye(a.shape[1]), 0
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > rtol * max(s[0], 1e-300))) if len(s) else 0
    return vt[rank:].T, rank


def pian_filter(basis: StressBasis, aux_modes: Sequence[AuxMode], coords, order: int = 3) -> StressBasis:
    """Drop the stress directions that do work on the auxiliary strains.

    The constant modes are retained explicitly; the rest of the kept space is
    an orthonormal complement in coefficient space.
    """
    if not aux_modes:
        return basis
    pts, w = gauss_2d(order)
    shape = shape_for(coords, pts)
    phys = shape.values @ np.asarray(coords, dtype=float)
    s = basis.evaluate(pts, phys)
    b_aux = aux_strain_matrix(aux_modes, shape)
    wd = w * shape.det_j
    q = np.einsum("q,qim,qin->mn", wd, s, b_aux)  # (n_modes, n_aux)
    # Cauchy-Schwarz bound, so that pure roundoff in q is not mistaken for work
    s_norm = np.sqrt(np.einsum("q,qim,qim->", wd, s, s))
    b_norm = np.sqrt(np.einsum("q,qin,qin->", wd, b_aux, b_aux))
    scale = s_norm * b_norm or 1.0
    if np.max(np.abs(q[:3])) > 1e-10 * scale:
        raise RankDeficientFilter("auxiliary strains do not have zero mean; constant modes lost")
    keep, _ = _null_space(q.T / scale)
    consts = np.eye(basis.n_modes)[:, :3]
    rest, _ = _null_space(np.vstack([q.T / scale, consts.T]))
    z = np.hstack([consts, rest])
    if z.shape[1] < 3 or np.linalg.matrix_rank(z) != z.shape[1]:
        raise RankDeficientFilter("filtered basis lost the constant modes")
    inner = basis.evaluate
    div = basis.divergence
    return StressBasis(
        z.shape[1],
        lambda parent, phys: inner(parent, phys) @ z,
        basis.frame,
        basis.self_equilibrated,
        None if div is None else (lambda parent, phys: div(parent, phys) @ z),
    )


# ---------------------------------------------------------------- enhanced strain

PARENT_ENHANCED_MODES = 4


def enhanced_basis_q4(coords, p) -> np.ndarray:
    """Incompatible strain modes pushed forward from the parent square, (Q, 3, 4).

    Parent modes: xi in eps_xx, eta in eps_yy, (xi, eta) in the shear strain.
    The push-forward uses the Jacobian at the centre and the ratio of Jacobian
    determinants, so the element integral vanishes for any quadrature exact on
    odd functions.
    """
    pts = _as_points(p)
    shape = shape_q4(coords, pts)
    centre = shape_q4(coords, np.zeros((1, 2)))
    j0 = centre.jacobian[0]
    t = strain_transform(np.linalg.inv(j0))
    xi, eta = pts[:, 0], pts[:, 1]
    e_parent = np.zeros((len(pts), 3, 4))
    e_parent[:, 0, 0] = xi
    e_parent[:, 1, 1] = eta
    e_parent[:, 2, 2] = xi
    e_parent[:, 2, 3] = eta
    ratio = centre.det_j[0] / shape.det_j
    return ratio[:, None, None] * (t @ e_parent)


# ---------------------------------------------------------------- strain subdomains


@dataclass(frozen=True)
class StrainBasis:
    """Strain interpolation: identical to the stress basis or piecewise constant."""

    n_modes: int
    identical: bool
    areas: np.ndarray | None = None  # (D,)
    averaged_stress: np.ndarray | None = None  # (D, 3, n_sigma)
    points: np.ndarray | None = None  # parent points of the composite rule
    weights: np.ndarray | None = None  # physical weights w * det J
    owner: np.ndarray | None = None  # subdomain of each point


def identical_strain_basis(stress_basis: StressBasis) -> StrainBasis:
    return StrainBasis(stress_basis.n_modes, True)


def subdomain_partition(coords, n_sub: int, stress_basis: StressBasis, rule: int = 2) -> StrainBasis:
    """Piecewise-constant strain on an m x m split of the parent square."""
    m = int(round(np.sqrt(n_sub)))
    if m * m != n_sub or m < 1:
        raise ValueError("number of subdomains must be a perfect square")
    pts, w, owner = composite_rule(m, rule)
    shape = shape_for(coords, pts)
    phys = shape.values @ np.asarray(coords, dtype=float)
    wd = w * shape.det_j
    s = stress_basis.evaluate(pts, phys)
    areas = np.bincount(owner, weights=wd, minlength=n_sub)
    summed = np.zeros((n_sub, 3, stress_basis.n_modes))
    np.add.at(summed, owner, wd[:, None, None] * s)
    return StrainBasis(3 * n_sub, False, areas, summed / areas[:, None, None], pts, wd, owner)


# ---------------------------------------------------------------- plastic multipliers


@dataclass(frozen=True)
class MultiplierBasis:
    """Sites where the plastic multiplier lives and the quadrature attached to them."""

    kind: str
    n_sites: int
    points: np.ndarray  # parent points (P, 2)
    weights: np.ndarray  # parent weights (P,)
    site_of_point: np.ndarray  # (P,)

    @property
    def site_weights(self) -> np.ndarray:
        return np.bincount(self.site_of_point, weights=self.weights, minlength=self.n_sites)


def multiplier_basis(kind: str, order: int = 2, n_sub: int = 1, rule: int = 2) -> MultiplierBasis:
    """``gauss_pointwise``: one multiplier per point of an order x order rule.
    ``piecewise_constant``: one multiplier per parent subsquare (n_sub = m^2)."""
    if kind == "gauss_pointwise":
        pts, w = gauss_2d(order)
        return MultiplierBasis(kind, len(w), pts, w, np.arange(len(w)))
    if kind == "piecewise_constant":
        m = int(round(np.sqrt(n_sub)))
        if m * m != n_sub:
            raise ValueError("number of subdomains must be a perfect square")
        pts, w, owner = composite_rule(m, rule)
        return MultiplierBasis(kind, n_sub, pts, w, owner)
    raise ValueError(f"unknown multiplier basis {kind!r}")
