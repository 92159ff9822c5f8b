"""Batched element operators: every array carries a leading element axis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import interpolation as ip
from ..errors import CollinearNodes, SingularCV, SingularG
from ..material import MaterialParams, elastic_compliance, elastic_tensor
from .formulation import ElementFormulation


@dataclass(frozen=True)
class RigidBodyFilter:
    """Projector killing rigid motions and its factorization ``full = V @ quotient``."""

    full: np.ndarray  # (n_u, n_u)
    quotient: np.ndarray  # (n_u - 3, n_u)
    embed: np.ndarray  # (n_u, n_u - 3)


def rigid_modes(coords) -> np.ndarray:
    xy = np.asarray(coords, dtype=float)
    c = xy.mean(axis=0)
    n = len(xy)
    r = np.zeros((2 * n, 3))
    r[0::2, 0] = 1.0
    r[1::2, 1] = 1.0
    r[0::2, 2] = -(xy[:, 1] - c[1])
    r[1::2, 2] = xy[:, 0] - c[0]
    return r


def rigid_body_filter(coords) -> RigidBodyFilter:
    r = rigid_modes(coords)
    u, s, _ = np.linalg.svd(r, full_matrices=True)
    if s[-1] <= 1e-12 * s[0]:
        raise CollinearNodes("rigid modes are linearly dependent")
    embed = u[:, 3:]
    full = np.eye(len(r)) - u[:, :3] @ u[:, :3].T
    return RigidBodyFilter(full, embed.T, embed)


def stress_basis_for(form: ElementFormulation, coords) -> ip.StressBasis:
    if form.stress == "pian_sumihara":
        return ip.pian_sumihara_basis(coords)
    if form.stress == "constant":
        return ip.constant_stress_basis()
    if form.stress == "airy":
        return ip.airy_basis(form.airy_degree, ip.element_frame(coords), form.airy_extra)
    raise ValueError(f"no stress basis {form.stress!r}")


@dataclass(frozen=True)
class ElementOperators:
    """Precomputed per-element matrices for one formulation over a set of elements.

    Sampling sites are the quadrature points except for the nodal-force
    algorithm, whose sites are the strain subdomains.
    """

    formulation: ElementFormulation
    material: MaterialParams
    coords: np.ndarray  # (N, n_nodes, 2)
    points: np.ndarray  # parent quadrature points (Q, 2)
    weights: np.ndarray  # physical weights (N, Q)
    phys_points: np.ndarray  # (N, Q, 2)
    b: np.ndarray  # (N, Q, 3, n_u)
    area: np.ndarray  # (N,)
    elastic: np.ndarray
    compliance: np.ndarray
    site_coords: np.ndarray  # (N, n_sites, 2)
    s: np.ndarray | None = None  # (N, Q, 3, n_sigma)
    c: np.ndarray | None = None  # (N, n_sigma, n_u)
    he: np.ndarray | None = None  # (N, n_sigma, n_sigma)
    g: np.ndarray | None = None  # identical strain-stress: int S^T S
    bbar: np.ndarray | None = None  # (N, Q, 3, n_u)
    enhanced: np.ndarray | None = None  # (N, Q, 3, n_enh)
    sbar: np.ndarray | None = None  # (N, D, 3, n_sigma)
    sub_areas: np.ndarray | None = None  # (N, D)
    embed: np.ndarray | None = None  # (N, n_u, n_u - 3)
    cv: np.ndarray | None = None  # (N, n_sigma, n_u - 3)
    site_of_point: np.ndarray | None = None  # multiplier site of each point (CM)
    site_areas: np.ndarray | None = None  # (N, n_msites) (CM)
    extras: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return self.coords.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[-1]

    @property
    def n_sigma(self) -> int:
        return 0 if self.c is None else self.c.shape[1]

    @property
    def n_sites(self) -> int:
        return self.site_coords.shape[1]

    def subset(self, idx) -> "ElementOperators":
        """Operators restricted to a subset of elements."""
        kw = {}
        for name in ("coords", "weights", "phys_points", "b", "area", "site_coords", "s", "c", "he",
                     "g", "bbar", "enhanced", "sbar", "sub_areas", "embed", "cv", "site_areas"):
            val = getattr(self, name)
            kw[name] = None if val is None else val[idx]
        return ElementOperators(self.formulation, self.material, points=self.points,
                                elastic=self.elastic, compliance=self.compliance,
                                site_of_point=self.site_of_point, extras=self.extras, **kw)


def _quadrature(form: ElementFormulation):
    if form.algorithm == "hw_nodal_force":
        m = int(round(np.sqrt(form.n_subdomains)))
        pts, w, owner = ip.composite_rule(m, form.subdomain_rule)
        return pts, w, owner
    if form.algorithm == "cm":
        mb = (ip.multiplier_basis("gauss_pointwise", form.quad_order)
              if form.multiplier == "gauss_pointwise"
              else ip.multiplier_basis("piecewise_constant", n_sub=form.multiplier_subdomains))
        return mb.points, mb.weights, mb.site_of_point
    pts, w = ip.gauss_2d(form.quad_order)
    return pts, w, np.arange(len(w))


def build_operators(form: ElementFormulation, coords, material: MaterialParams) -> ElementOperators:
    """Assemble operators for one element ``(n_nodes, 2)`` or many ``(N, n_nodes, 2)``."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        coords = coords[None]
    if coords.shape[1] != form.n_nodes:
        raise ValueError(f"{form.tag} needs {form.n_nodes}-node elements")
    pts, pw, owner = _quadrature(form)
    n_el = len(coords)
    collect: dict[str, list] = {k: [] for k in (
        "weights", "phys", "b", "s", "enh", "sbar", "sub_areas", "embed")}
    for xy in coords:
        shape = ip.shape_for(xy, pts)
        phys = shape.values @ xy
        collect["weights"].append(pw * shape.det_j)
        collect["phys"].append(phys)
        collect["b"].append(ip.b_matrix(shape))
        if form.stress is not None:
            basis = stress_basis_for(form, xy)
            collect["s"].append(basis.evaluate(pts, phys))
        if form.algorithm == "es":
            collect["enh"].append(ip.enhanced_basis_q4(xy, pts))
        if form.algorithm == "hw_nodal_force":
            collect["embed"].append(rigid_body_filter(xy).embed)

    weights = np.array(collect["weights"])
    b = np.array(collect["b"])
    phys = np.array(collect["phys"])
    area = weights.sum(axis=1)
    kw: dict = {}
    elastic = elastic_tensor(material)
    compliance = elastic_compliance(material)
    site_coords = phys
    if form.stress is not None:
        s = np.array(collect["s"])
        c = np.einsum("nq,nqim,nqij->nmj", weights, s, b)
        he = np.einsum("nq,nqim,ik,nqkl->nml", weights, s, compliance, s)
        kw.update(s=s, c=c, he=0.5 * (he + np.swapaxes(he, 1, 2)))
    if form.algorithm == "hw_identical":
        g = np.einsum("nq,nqim,nqil->nml", weights, kw["s"], kw["s"])
        g = 0.5 * (g + np.swapaxes(g, 1, 2))
        cond = np.linalg.cond(g)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e14):
            raise SingularG("stress basis Gram matrix is singular")
        # B-bar = S G^{-T} C (G symmetric)
        bbar = np.einsum("nqim,nmj->nqij", kw["s"], np.linalg.solve(g, kw["c"]))
        kw.update(g=g, bbar=bbar)
    if form.algorithm == "es":
        kw["enhanced"] = np.array(collect["enh"])
    if form.algorithm == "hw_nodal_force":
        n_sub = form.n_subdomains
        sub_areas = np.zeros((n_el, n_sub))
        for d in range(n_sub):
            sub_areas[:, d] = weights[:, owner == d].sum(axis=1)
        sbar = np.zeros((n_el, n_sub, 3, kw["s"].shape[-1]))
        for d in range(n_sub):
            sel = owner == d
            sbar[:, d] = np.einsum("nq,nqim->nim", weights[:, sel], kw["s"][:, sel]) / sub_areas[:, d, None, None]
        centres = np.zeros((n_el, n_sub, 2))
        for d in range(n_sub):
            sel = owner == d
            centres[:, d] = np.einsum("nq,nqk->nk", weights[:, sel], phys[:, sel]) / sub_areas[:, d, None]
        embed = np.array(collect["embed"])
        cv = kw["c"] @ embed
        if cv.shape[1] != cv.shape[2]:
            raise SingularCV(f"C V must be square; got {cv.shape[1:]} (N_sigma must equal N_u - 3)")
        cond = np.linalg.cond(cv)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e13):
            raise SingularCV("C V is singular")
        kw.update(sbar=sbar, sub_areas=sub_areas, embed=embed, cv=cv)
        site_coords = centres
    if form.algorithm == "cm":
        n_ms = int(owner.max()) + 1
        site_areas = np.zeros((n_el, n_ms))
        for d in range(n_ms):
            site_areas[:, d] = weights[:, owner == d].sum(axis=1)
        kw.update(site_of_point=owner, site_areas=site_areas)
    return ElementOperators(form, material, coords, pts, weights, phys, b, area, elastic,
                            compliance, site_coords, **kw)
