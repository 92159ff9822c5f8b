"""Batched element state determinations.

Each function maps element displacements ``u (N, n_u)`` and committed histories
to internal forces, consistent stiffness and a trial history. Histories are
never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import NoConvergence, PerfectPlasticityUnsupported, SingularEnhancedStiffness
from ..material import (
    MaterialPointState,
    inverse_state_update,
    state_update,
    yield_direction_plane_stress,
    yield_value,
    PLANE_STRESS,
    PLANE_STRESS_PROJECTOR,
)
from .operators import ElementOperators
from . import projection as proj


@dataclass(frozen=True)
class ElementHistory:
    """Committed per-element data; ``state`` has shape (N, n_sites)."""

    state: MaterialPointState
    stress: np.ndarray  # (N, n_sites, 3)
    beta: np.ndarray  # (N, n_sigma)
    enhanced: np.ndarray  # (N, n_enh)
    q_lambda: np.ndarray  # (N, n_u - 3) or (N, 0)
    ep_hat: np.ndarray  # (N, n_sigma)

    @property
    def n_elements(self) -> int:
        return self.stress.shape[0]

    def subset(self, idx) -> "ElementHistory":
        return ElementHistory(self.state[idx], self.stress[idx], self.beta[idx], self.enhanced[idx],
                              self.q_lambda[idx], self.ep_hat[idx])


def virgin_history(ops: ElementOperators) -> ElementHistory:
    n = ops.n_elements
    n_enh = 0 if ops.enhanced is None else ops.enhanced.shape[-1]
    n_q = ops.n_u - 3 if ops.formulation.algorithm == "hw_nodal_force" else 0
    return ElementHistory(
        MaterialPointState.virgin((n, ops.n_sites)),
        np.zeros((n, ops.n_sites, 3)),
        np.zeros((n, ops.n_sigma)),
        np.zeros((n, n_enh)),
        np.zeros((n, n_q)),
        np.zeros((n, ops.n_sigma)),
    )


@dataclass
class ElementResult:
    q_int: np.ndarray  # (N, n_u)
    stiffness: np.ndarray  # (N, n_u, n_u)
    history: ElementHistory
    beta: np.ndarray | None
    yield_values: np.ndarray  # (N, n_sites) after the update
    multipliers: np.ndarray  # (N, n_sites)
    iterations: int = 0
    active_count: np.ndarray | None = None
    stress_residual: np.ndarray | None = None  # relaxed HR only
    q_modified: np.ndarray | None = None  # relaxed HR only
    diagnostics: dict = field(default_factory=dict)


def _sym(k):
    return 0.5 * (k + np.swapaxes(k, -1, -2))


def _strain_scale(ops: ElementOperators) -> float:
    return ops.material.yield_stress / ops.material.youngs_modulus


# ---------------------------------------------------------------- displacement-type


def _gauss_point_state(u, hist: ElementHistory, ops: ElementOperators, bmat) -> ElementResult:
    eps = np.einsum("nqij,nj->nqi", bmat, u)
    res = state_update(eps, hist.state, ops.material)
    w = ops.weights
    q = np.einsum("nq,nqij,nqi->nj", w, bmat, res.stress)
    k = np.einsum("nq,nqij,nqik,nqkl->njl", w, bmat, res.tangent, bmat)
    new = replace(hist, state=res.new_state, stress=res.stress)
    phi = yield_value(res.stress, res.new_state, ops.material,
                      0.0 if ops.material.plane_assumption == PLANE_STRESS else res.out_of_plane)
    return ElementResult(q, _sym(k), new, None, phi, res.plastic_multiplier, res.iterations)


def displacement_element_state(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Compatible element: material update at every quadrature point."""
    return _gauss_point_state(np.asarray(u, dtype=float), hist, ops, ops.b)


def hw_identical_state(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Three-field element with strain and stress spaces equal: closed form via B-bar."""
    u = np.asarray(u, dtype=float)
    out = _gauss_point_state(u, hist, ops, ops.bbar)
    rhs = np.einsum("nq,nqim,nqi->nm", ops.weights, ops.s, out.history.stress)
    beta = np.linalg.solve(ops.g, rhs[..., None])[..., 0]
    out.beta = beta
    out.history = replace(out.history, beta=beta)
    return out


# ---------------------------------------------------------------- enhanced strain


def es_state(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Enhanced strain element; Newton with energy line search on the enhanced parameters."""
    form, mat = ops.formulation, ops.material
    u = np.asarray(u, dtype=float)
    w, b, en = ops.weights, ops.b, ops.enhanced
    eps_c = np.einsum("nqij,nj->nqi", b, u)
    a = hist.enhanced.copy()

    def evaluate(a_):
        eps = eps_c + np.einsum("nqij,nj->nqi", en, a_)
        return state_update(eps, hist.state, mat), eps

    res, eps = evaluate(a)
    scale = ops.area * np.maximum(mat.youngs_modulus * np.max(np.abs(eps_c), axis=(1, 2)), mat.yield_stress)
    it = 0
    while True:
        r = np.einsum("nq,nqij,nqi->nj", w, en, res.stress)
        kaa = np.einsum("nq,nqij,nqik,nqkl->njl", w, en, res.tangent, en)
        norm = np.linalg.norm(r, axis=1)
        live = norm > form.tol * scale
        if not np.any(live):
            break
        if it >= form.max_iter:
            raise NoConvergence("enhanced strain Newton", it, float(np.max(norm / scale)))
        it += 1
        try:
            da = -np.linalg.solve(kaa, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularEnhancedStiffness(str(exc)) from exc
        da[~live] = 0.0
        energy0 = np.einsum("nq,nq->n", w, res.incremental_energy_value)
        slope = np.einsum("ni,ni->n", r, da)
        t = np.ones(len(a))
        for _ in range(12):
            trial, _ = evaluate(a + t[:, None] * da)
            e1 = np.einsum("nq,nq->n", w, trial.incremental_energy_value)
            bad = e1 > energy0 + 1e-4 * t * slope + 1e-15 * np.abs(energy0)
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        a = a + t[:, None] * da
        res, eps = evaluate(a)
    kuu = np.einsum("nq,nqij,nqik,nqkl->njl", w, b, res.tangent, b)
    kau = np.einsum("nq,nqij,nqik,nqkl->njl", w, en, res.tangent, b)
    kaa = np.einsum("nq,nqij,nqik,nqkl->njl", w, en, res.tangent, en)
    k = kuu - np.swapaxes(kau, 1, 2) @ np.linalg.solve(kaa, kau)
    q = np.einsum("nq,nqij,nqi->nj", w, b, res.stress)
    new = replace(hist, state=res.new_state, stress=res.stress, enhanced=a)
    phi = yield_value(res.stress, res.new_state, mat,
                      0.0 if mat.plane_assumption == PLANE_STRESS else res.out_of_plane)
    return ElementResult(q, _sym(k), new, None, phi, res.plastic_multiplier, it)


# ---------------------------------------------------------------- stress-driven (HR, HW nodal force)


def _require_hardening(ops: ElementOperators):
    if not ops.material.has_hardening:
        raise PerfectPlasticityUnsupported(f"{ops.formulation.tag} needs a hardening material")


class _StressSites:
    """Evaluates the stress-driven constitutive response at the sites of an element batch."""

    def __init__(self, ops: ElementOperators, hist: ElementHistory, basis: np.ndarray, weights: np.ndarray):
        self.ops, self.hist, self.basis, self.weights = ops, hist, basis, weights
        n, n_s, _, m = basis.shape
        self._flat = basis.reshape(n, n_s * 3, m)
        self._wflat_t = np.swapaxes((weights[..., None, None] * basis).reshape(n, n_s * 3, m), 1, 2)

    def __call__(self, beta):
        n, n_s, _, m = self.basis.shape
        sig = (self._flat @ beta[..., None]).reshape(n, n_s, 3)
        res = inverse_state_update(sig, self.hist.state, self.ops.material)
        ehat = (self._wflat_t @ res.strain.reshape(n, n_s * 3, 1))[..., 0]
        ct_b = (res.compliance_tangent @ self.basis).reshape(n, n_s * 3, m)
        h = self._wflat_t @ ct_b
        energy = np.sum(self.weights * res.complementary_energy_value, axis=1)
        return sig, res, ehat, _sym(h), energy


def _stress_newton(sites: _StressSites, target: np.ndarray, beta0: np.ndarray, scale: np.ndarray,
                   tol: float, max_iter: int, label: str):
    """Newton on ``ehat(beta) = target`` with an energy line search (the map is a gradient)."""
    beta = beta0.copy()
    sig, res, ehat, h, energy = sites(beta)
    it = 0
    while True:
        r = target - ehat
        norm = np.linalg.norm(r, axis=1)
        live = norm > tol * scale
        if not np.any(live):
            break
        if it >= max_iter:
            raise NoConvergence(label, it, float(np.max(norm / scale)))
        it += 1
        d = np.linalg.solve(h, r[..., None])[..., 0]
        d[~live] = 0.0
        pot0 = energy - np.einsum("nm,nm->n", beta, target)
        slope = -np.einsum("nm,nm->n", r, d)
        t = np.ones(len(beta))
        for _ in range(12):
            trial = sites(beta + t[:, None] * d)
            pot1 = trial[4] - np.einsum("nm,nm->n", beta + t[:, None] * d, target)
            bad = pot1 > pot0 + 1e-4 * t * slope + 1e-14 * np.abs(pot0)
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        else:
            trial = sites(beta + t[:, None] * d)
        beta = beta + t[:, None] * d
        sig, res, ehat, h, energy = trial
    return beta, sig, res, ehat, h, it


def _hr_scale(ops: ElementOperators, cu: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(cu, axis=1), ops.area * _strain_scale(ops))


def hr_state(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Two-field stress element: local Newton on the element compatibility residual."""
    _require_hardening(ops)
    form = ops.formulation
    u = np.asarray(u, dtype=float)
    cu = np.einsum("nmj,nj->nm", ops.c, u)
    sites = _StressSites(ops, hist, ops.s, ops.weights)
    beta, sig, res, _, h, it = _stress_newton(sites, cu, hist.beta, _hr_scale(ops, cu),
                                              form.tol, form.max_iter, "HR local Newton")
    return _hr_result(ops, hist, beta, sig, res, h, it)


def _hr_result(ops, hist, beta, sig, res, h, it, residual=None):
    hinv_c = np.linalg.solve(h, ops.c)
    k = np.einsum("nmi,nmj->nij", ops.c, hinv_c)
    q = np.einsum("nmi,nm->ni", ops.c, beta)
    new = replace(hist, state=res.new_state, stress=sig, beta=beta)
    phi = yield_value(sig, res.new_state, ops.material)
    out = ElementResult(q, _sym(k), new, beta, phi, res.plastic_multiplier, it)
    if residual is not None:
        out.stress_residual = residual
        out.q_modified = q + np.einsum("nmi,nm->ni", ops.c, np.linalg.solve(h, residual[..., None])[..., 0])
    return out


def hr_state_relaxed(u, hist: ElementHistory, ops: ElementOperators, beta_iterate=None) -> ElementResult:
    """One linearized stress update per call; the leftover residual goes to the global level.

    ``beta_iterate`` is the stress iterate from the previous global iteration
    (the committed stress parameters at the start of an increment).
    """
    _require_hardening(ops)
    u = np.asarray(u, dtype=float)
    beta0 = hist.beta if beta_iterate is None else beta_iterate
    cu = np.einsum("nmj,nj->nm", ops.c, u)
    sites = _StressSites(ops, hist, ops.s, ops.weights)
    _, _, ehat, h, _ = sites(beta0)
    beta = beta0 + np.linalg.solve(h, (cu - ehat)[..., None])[..., 0]
    sig, res, ehat, h, _ = sites(beta)
    return _hr_result(ops, hist, beta, sig, res, h, 1, residual=cu - ehat)


def hw_nodal_force_state(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Nodal-force iteration on the deformational parameters with piecewise-constant strains."""
    _require_hardening(ops)
    form = ops.formulation
    u = np.asarray(u, dtype=float)
    cv, embed = ops.cv, ops.embed
    lam_s = np.einsum("nji,nj->ni", embed, u)
    sites = _StressSites(ops, hist, ops.sbar, ops.sub_areas)
    q_lam = hist.q_lambda.copy()
    cu = np.einsum("nmi,ni->nm", cv, lam_s)
    scale = _hr_scale(ops, cu)
    it = 0
    beta = np.linalg.solve(np.swapaxes(cv, 1, 2), q_lam[..., None])[..., 0]
    evaluated = sites(beta)
    while True:
        sig, res, ehat, h, energy = evaluated
        lam = np.linalg.solve(cv, ehat[..., None])[..., 0]
        mismatch = np.linalg.norm(ehat - cu, axis=1)
        live = mismatch > form.tol * scale
        dq_dlam = np.swapaxes(cv, 1, 2) @ np.linalg.solve(h, cv)
        if not np.any(live):
            break
        if it >= form.max_iter:
            raise NoConvergence("nodal-force iteration", it, float(np.max(mismatch / scale)))
        it += 1
        dq = -np.einsum("nij,nj->ni", dq_dlam, lam - lam_s)
        dq[~live] = 0.0
        # line search on the complementary energy expressed in the stress parameters
        dbeta = np.linalg.solve(np.swapaxes(cv, 1, 2), dq[..., None])[..., 0]
        pot0 = energy - np.einsum("nm,nm->n", beta, cu)
        slope = np.einsum("nm,nm->n", ehat - cu, dbeta)
        t = np.ones(len(u))
        for _ in range(12):
            trial = sites(beta + t[:, None] * dbeta)
            pot1 = trial[4] - np.einsum("nm,nm->n", beta + t[:, None] * dbeta, cu)
            bad = pot1 > pot0 + 1e-4 * t * slope + 1e-14 * np.abs(pot0)
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        else:
            trial = sites(beta + t[:, None] * dbeta)
        q_lam = q_lam + t[:, None] * dq
        beta = beta + t[:, None] * dbeta
        evaluated = trial
    k = embed @ dq_dlam @ np.swapaxes(embed, 1, 2)
    q = np.einsum("nij,nj->ni", embed, q_lam)
    new = replace(hist, state=res.new_state, stress=sig, beta=beta, q_lambda=q_lam)
    phi = yield_value(sig, res.new_state, ops.material)
    return ElementResult(q, _sym(k), new, beta, phi, res.plastic_multiplier, it)


# ---------------------------------------------------------------- complementary mixed


class CMProblemBuilder:
    """Closest-point projection data for a batch of complementary mixed elements.

    Unknowns per element: stress parameters and, with isotropic hardening, one
    hardening stress increment per multiplier site.
    """

    def __init__(self, u, hist: ElementHistory, ops: ElementOperators):
        mat = ops.material
        if mat.kinematic_hardening > 0:
            raise NotImplementedError("complementary mixed elements support isotropic hardening only")
        if mat.plane_assumption != PLANE_STRESS:
            raise NotImplementedError("complementary mixed elements require plane stress")
        self.ops, self.hist = ops, hist
        c = mat.von_mises_constant
        n_el, n_sig = ops.n_elements, ops.n_sigma
        owner = ops.site_of_point
        self.n_msites = ops.site_areas.shape[1]
        self.owner_matrix = np.eye(self.n_msites)[owner]  # (P, D)
        self.hardening = mat.isotropic_hardening > 0
        n_k = self.n_msites if self.hardening else 0
        self.n_sig, self.n_k = n_sig, n_k
        # site hardening state: all points of a site share the same value
        alpha_site = np.einsum("np,pd->nd", hist.state.isotropic_var, self.owner_matrix) / self.owner_matrix.sum(0)
        self.radius = c * (mat.yield_stress + mat.isotropic_hardening * alpha_site)  # (N, D)
        self.alpha_site = alpha_site
        metric = np.zeros((n_el, n_sig + n_k, n_sig + n_k))
        metric[:, :n_sig, :n_sig] = ops.he
        if self.hardening:
            idx = np.arange(n_sig, n_sig + n_k)
            metric[:, idx, idx] = ops.site_areas / mat.isotropic_hardening
        self.projected_metric = np.swapaxes(ops.s, -1, -2) @ PLANE_STRESS_PROJECTOR @ ops.s
        u = np.asarray(u, dtype=float)
        self.cu = np.einsum("nmj,nj->nm", ops.c, u)
        x_tr = np.zeros((n_el, n_sig + n_k))
        x_tr[:, :n_sig] = np.linalg.solve(ops.he, (self.cu - hist.ep_hat)[..., None])[..., 0]
        self.problem = proj.ProjectionProblem(
            metric, x_tr, self.constraints,
            ops.site_areas * mat.yield_stress,
            np.maximum(np.linalg.norm(self.cu - hist.ep_hat, axis=1), ops.area * _strain_scale(ops)),
            np.full(n_el, mat.yield_stress),
        )

    def constraints(self, x, idx):
        ops = self.ops
        c = ops.material.von_mises_constant
        s = ops.s[idx]
        w = ops.weights[idx]
        beta = x[:, :self.n_sig]
        m = self.n_sig
        sig = (s @ beta[:, None, :, None])[..., 0]
        norm, grad, _ = yield_direction_plane_stress(sig)
        om_t = self.owner_matrix.T
        g = (w * norm) @ self.owner_matrix - ops.site_areas[idx] * self.radius[idx]
        # chain rule through sig = s beta; the yield Hessian is (P - grad grad^T)/norm
        gb = (np.swapaxes(s, -1, -2) @ grad[..., None])[..., 0]  # (N, P, m)
        safe = np.where(norm > 0, norm, 1.0)
        hb = (self.projected_metric[idx] - gb[..., :, None] * gb[..., None, :]) * (w / safe)[..., None, None]
        n = self.n_sig + self.n_k
        dg = np.zeros((len(idx), self.n_msites, n))
        dg[:, :, :m] = om_t @ (w[..., None] * gb)
        d2g = np.zeros((len(idx), self.n_msites, n, n))
        d2g[:, :, :m, :m] = (om_t @ hb.reshape(len(idx), -1, m * m)).reshape(len(idx), -1, m, m)
        if self.hardening:
            kappa = x[:, self.n_sig:]
            g = g - c * ops.site_areas[idx] * kappa
            d = np.arange(self.n_msites)
            dg[:, d, self.n_sig + d] = -c * ops.site_areas[idx]
        return g, dg, d2g

    def finish(self, sol: proj.ProjectionSolution, iterations: int) -> ElementResult:
        ops, hist = self.ops, self.hist
        mat = ops.material
        c = mat.von_mises_constant
        n_el = ops.n_elements
        beta = sol.x[:, :self.n_sig]
        sig = np.einsum("npim,nm->npi", ops.s, beta)
        _, grad, _ = yield_direction_plane_stress(sig)
        l_pt = sol.multipliers @ self.owner_matrix.T  # (N, P)
        dep = l_pt[..., None] * grad
        alpha_new = (self.alpha_site + c * sol.multipliers) @ self.owner_matrix.T
        new_state = MaterialPointState(hist.state.plastic_strain + dep, alpha_new, hist.state.kinematic_var)
        ep_hat = hist.ep_hat + np.einsum("np,npim,npi->nm", ops.weights, ops.s, dep)
        coupling = np.zeros((n_el, self.n_sig + self.n_k, ops.n_u))
        coupling[:, :self.n_sig] = ops.c
        dx = proj.consistent_tangent(self.problem, sol, coupling)
        k = np.einsum("nmi,nmj->nij", ops.c, dx[:, :self.n_sig])
        q = np.einsum("nmi,nm->ni", ops.c, beta)
        g, _, _ = self.constraints(sol.x, np.arange(n_el))
        phi_site = g / ops.site_areas
        new = replace(hist, state=new_state, stress=sig, beta=beta, ep_hat=ep_hat)
        return ElementResult(q, _sym(k), new, beta, phi_site @ self.owner_matrix.T, l_pt, iterations,
                             active_count=sol.active.sum(axis=1),
                             diagnostics={"active": sol.active, "site_multipliers": sol.multipliers})


def cm_state_return_map(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Complementary mixed element solved by the active-set return mapping."""
    form = ops.formulation
    builder = CMProblemBuilder(u, hist, ops)
    sol = proj.return_mapping(builder.problem, form.tol, form.max_iter, form.max_sweeps)
    return builder.finish(sol, int(sol.iterations.max(initial=0)))


def _cm_single(u, hist, ops, solve) -> ElementResult:
    builder = CMProblemBuilder(u, hist, ops)
    prob = builder.problem
    n_el = prob.n_elements
    x = prob.x_trial.copy()
    d = builder.n_msites
    mult = np.zeros((n_el, d))
    active = np.zeros((n_el, d), dtype=bool)
    g, _, _ = builder.constraints(x, np.arange(n_el))
    iters = 0
    for e in range(n_el):
        if np.all(g[e] <= ops.formulation.tol * prob.g_scale[e]):
            continue
        x[e], mult[e], active[e], it = solve(prob, e)
        iters = max(iters, it)
    sol = proj.ProjectionSolution(x, np.where(active, mult, 0.0), active, np.full(n_el, iters))
    return builder.finish(sol, iters)


def cm_state_ip(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Complementary mixed element solved by the primal-dual interior point method."""
    form = ops.formulation
    res = _cm_single(u, hist, ops, lambda prob, e: proj.interior_point(
        prob, e, form.ip_variant, form.ip_eps_lambda, form.ip_theta, form.ip_eta))
    res.diagnostics.update(ip_variant=form.ip_variant, ip_theta=form.ip_theta, ip_eta=form.ip_eta,
                           ip_eps_lambda=form.ip_eps_lambda)
    return res


def cm_state_sqp(u, hist: ElementHistory, ops: ElementOperators) -> ElementResult:
    """Complementary mixed element solved by sequential quadratic programming."""
    form = ops.formulation
    return _cm_single(u, hist, ops, lambda prob, e: proj.sqp(prob, e, form.sqp_hessian))


# ---------------------------------------------------------------- dispatch


def element_state(u, hist: ElementHistory, ops: ElementOperators, beta_iterate=None) -> ElementResult:
    form = ops.formulation
    alg = form.algorithm
    if alg == "displacement":
        return displacement_element_state(u, hist, ops)
    if alg == "hw_identical":
        return hw_identical_state(u, hist, ops)
    if alg == "es":
        return es_state(u, hist, ops)
    if alg == "hr":
        if form.hr_relaxed:
            return hr_state_relaxed(u, hist, ops, beta_iterate)
        return hr_state(u, hist, ops)
    if alg == "hw_nodal_force":
        return hw_nodal_force_state(u, hist, ops)
    if alg == "cm":
        return {"return_mapping": cm_state_return_map, "interior_point": cm_state_ip,
                "sqp": cm_state_sqp}[form.cm_solver](u, hist, ops)
    raise ValueError(alg)
