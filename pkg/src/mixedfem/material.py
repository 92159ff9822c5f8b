"""Von Mises plasticity with linear isotropic and kinematic hardening.

Strain arrays use in-plane Voigt order ``(xx, yy, xy)`` with engineering shear
``gamma_xy = 2 eps_xy``; stress arrays use ``(sxx, syy, sxy)``. Every function
accepts arbitrary leading batch dimensions.

Internally the full in-plane tensor (including the out-of-plane diagonal) is
stored as a Mandel 4-vector ``(xx, yy, zz, sqrt(2) xy)`` so that dot products
and norms are Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, PerfectPlasticityUnsupported

SQRT2 = np.sqrt(2.0)
SQRT23 = np.sqrt(2.0 / 3.0)
ONE4 = np.array([1.0, 1.0, 1.0, 0.0])
EYE4 = np.eye(4)
DEV4 = EYE4 - np.outer(ONE4, ONE4) / 3.0
IN_PLANE = np.array([0, 1, 3])
# Voigt <-> Mandel scaling on the in-plane components
_STRAIN_SCALE = np.array([1.0, 1.0, 1.0 / SQRT2])
_STRESS_SCALE = np.array([1.0, 1.0, SQRT2])

PLANE_STRESS = "plane_stress"
PLANE_STRAIN = "plane_strain"

TIE_TOL = 1e-14  # trial yield ties take the elastic branch (relative to yield stress)


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    yield_stress: float
    isotropic_hardening: float = 0.0
    kinematic_hardening: float = 0.0
    plane_assumption: str = PLANE_STRESS
    von_mises_constant: float = float(SQRT23)
    local_tol: float = 1e-12
    max_local_iter: int = 50

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("youngs_modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (-1, 0.5)")
        if not self.yield_stress > 0:
            raise ValueError("yield_stress must be positive")
        if self.isotropic_hardening < 0 or self.kinematic_hardening < 0:
            raise ValueError("hardening moduli must be non-negative")
        if self.plane_assumption not in (PLANE_STRESS, PLANE_STRAIN):
            raise ValueError(f"unknown plane assumption {self.plane_assumption!r}")

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def bulk_modulus(self) -> float:
        return self.youngs_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))

    @property
    def hardening_modulus(self) -> float:
        """Plastic modulus felt by the multiplier: k_k + c^2 k_i."""
        c = self.von_mises_constant
        return self.kinematic_hardening + c * c * self.isotropic_hardening

    @property
    def has_hardening(self) -> bool:
        return self.hardening_modulus > 0.0


@dataclass(frozen=True)
class MaterialPointState:
    plastic_strain: np.ndarray
    isotropic_var: np.ndarray
    kinematic_var: np.ndarray

    @classmethod
    def virgin(cls, shape: tuple = ()) -> "MaterialPointState":
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        return cls(np.zeros(shape + (3,)), np.zeros(shape), np.zeros(shape + (3,)))

    @property
    def shape(self) -> tuple:
        return np.shape(self.isotropic_var)

    def __getitem__(self, idx) -> "MaterialPointState":
        return MaterialPointState(self.plastic_strain[idx], self.isotropic_var[idx], self.kinematic_var[idx])

    def reshape(self, shape: tuple) -> "MaterialPointState":
        shape = tuple(shape)
        return MaterialPointState(
            np.reshape(self.plastic_strain, shape + (3,)),
            np.reshape(self.isotropic_var, shape),
            np.reshape(self.kinematic_var, shape + (3,)),
        )


@dataclass(frozen=True)
class UpdateResult:
    stress: np.ndarray
    new_state: MaterialPointState
    plastic_multiplier: np.ndarray
    tangent: np.ndarray
    incremental_energy_value: np.ndarray
    out_of_plane: np.ndarray  # eps_zz under plane stress, sigma_zz under plane strain
    iterations: int = 0


@dataclass(frozen=True)
class InverseResult:
    strain: np.ndarray
    new_state: MaterialPointState
    compliance_tangent: np.ndarray
    plastic_multiplier: np.ndarray
    complementary_energy_value: np.ndarray
    out_of_plane: np.ndarray  # eps_zz under plane stress, sigma_zz under plane strain
    iterations: int = 0


# ---------------------------------------------------------------- conversions

def strain_to_mandel(e: np.ndarray, ezz) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    ezz = np.broadcast_to(ezz, e.shape[:-1])
    return np.stack([e[..., 0], e[..., 1], ezz, e[..., 2] / SQRT2], axis=-1)


def stress_to_mandel(s: np.ndarray, szz) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    szz = np.broadcast_to(szz, s.shape[:-1])
    return np.stack([s[..., 0], s[..., 1], szz, s[..., 2] * SQRT2], axis=-1)


def mandel_to_strain(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 0], m[..., 1], m[..., 3] * SQRT2], axis=-1)


def mandel_to_stress(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 0], m[..., 1], m[..., 3] / SQRT2], axis=-1)


def _isochoric_mandel(e: np.ndarray) -> np.ndarray:
    """Deviatoric strain-like Voigt triple -> Mandel, out-of-plane part from isochoric flow."""
    return strain_to_mandel(e, -(e[..., 0] + e[..., 1]))


def _condense(mat4: np.ndarray) -> np.ndarray:
    """Eliminate the out-of-plane row/column of a 4x4 Mandel matrix (Schur complement)."""
    a = mat4[..., IN_PLANE[:, None], IN_PLANE[None, :]]
    b = mat4[..., IN_PLANE, 2]
    return a - b[..., :, None] * b[..., None, :] / mat4[..., 2, 2][..., None, None]


def _restrict(mat4: np.ndarray) -> np.ndarray:
    return mat4[..., IN_PLANE[:, None], IN_PLANE[None, :]]


def _stiffness_to_voigt(c3: np.ndarray) -> np.ndarray:
    return c3 * _STRAIN_SCALE[:, None] * _STRAIN_SCALE[None, :]


def _compliance_to_voigt(d3: np.ndarray) -> np.ndarray:
    return d3 * _STRESS_SCALE[:, None] * _STRESS_SCALE[None, :]


def _elastic_4(params: MaterialParams) -> np.ndarray:
    return 2.0 * params.shear_modulus * DEV4 + params.bulk_modulus * np.outer(ONE4, ONE4)


def _compliance_4(params: MaterialParams) -> np.ndarray:
    return DEV4 / (2.0 * params.shear_modulus) + np.outer(ONE4, ONE4) / (9.0 * params.bulk_modulus)


def elastic_tensor(params: MaterialParams) -> np.ndarray:
    """Plane elastic matrix mapping engineering strain to stress."""
    c4 = _elastic_4(params)
    c3 = _condense(c4) if params.plane_assumption == PLANE_STRESS else _restrict(c4)
    c3 = _stiffness_to_voigt(c3)
    return 0.5 * (c3 + c3.T)


def elastic_compliance(params: MaterialParams) -> np.ndarray:
    return np.linalg.inv(elastic_tensor(params))


# ---------------------------------------------------------------- yield

def _radius(alpha_i, params: MaterialParams):
    return params.von_mises_constant * (params.yield_stress + params.isotropic_hardening * alpha_i)


def yield_value(stress, state: MaterialPointState, params: MaterialParams, sigma_zz=0.0) -> np.ndarray:
    """Yield function value; non-positive means admissible.

    ``sigma_zz`` is the out-of-plane stress (zero under plane stress).
    """
    s4 = stress_to_mandel(stress, sigma_zz)
    xi = s4 @ DEV4 - params.kinematic_hardening * _isochoric_mandel(np.asarray(state.kinematic_var))
    return np.linalg.norm(xi, axis=-1) - _radius(np.asarray(state.isotropic_var), params)


def dissipation_increment(d_plastic_strain, d_isotropic, params: MaterialParams, d_kinematic=None):
    """Support function of the elastic domain evaluated at an increment.

    In-plane increments are isochoric by construction. Returns ``inf`` when the
    increment cannot be produced by normal flow.
    """
    dep = np.asarray(d_plastic_strain, dtype=float)
    da = np.asarray(d_isotropic, dtype=float)
    norm = np.linalg.norm(_isochoric_mandel(dep), axis=-1)
    admissible = da >= params.von_mises_constant * norm * (1.0 - 1e-12)
    if d_kinematic is not None and params.kinematic_hardening > 0:
        mismatch = np.linalg.norm(np.asarray(d_kinematic, dtype=float) - dep, axis=-1)
        admissible &= mismatch <= 1e-12 * np.maximum(norm, 1e-300)
    return np.where(admissible, params.yield_stress * da, np.inf)


# ---------------------------------------------------------------- direct update

def _return_3d(eps4, ep4, ak4, alpha_i, params: MaterialParams):
    """Radial return for a full in-plane 3D strain (Mandel)."""
    g2 = 2.0 * params.shear_modulus
    kb = params.bulk_modulus
    ee = eps4 - ep4
    tr = ee[..., :3].sum(-1)
    s_tr = g2 * (ee @ DEV4)
    eta = s_tr - params.kinematic_hardening * ak4
    neta = np.linalg.norm(eta, axis=-1)
    phi = neta - _radius(alpha_i, params)
    plastic = phi > TIE_TOL * params.yield_stress
    h = g2 + params.hardening_modulus
    dl = np.where(plastic, phi / h, 0.0)
    safe = np.where(neta > 0, neta, 1.0)
    n = eta / safe[..., None]
    sig = s_tr - (g2 * dl)[..., None] * n + kb * tr[..., None] * ONE4
    nn = n[..., :, None] * n[..., None, :]
    a = np.where(plastic, g2 * g2 * dl / safe, 0.0)[..., None, None]
    b = np.where(plastic, g2 * g2 / h, 0.0)[..., None, None]
    c4 = _elastic_4(params) - a * (DEV4 - nn) - b * nn
    return sig, c4, dl, n


def state_update(strain, prior: MaterialPointState, params: MaterialParams) -> UpdateResult:
    """Backward-Euler update minimizing the incremental energy.

    Under plane stress the out-of-plane strain is an extra unknown of a
    safeguarded Newton loop that drives the out-of-plane stress to zero.
    """
    eps = np.asarray(strain, dtype=float)
    ep_v = np.broadcast_to(prior.plastic_strain, eps.shape)
    ak_v = np.broadcast_to(prior.kinematic_var, eps.shape)
    alpha = np.broadcast_to(prior.isotropic_var, eps.shape[:-1])
    ep4 = _isochoric_mandel(ep_v)
    ak4 = _isochoric_mandel(ak_v)
    iterations = 0

    if params.plane_assumption == PLANE_STRAIN:
        ezz = np.zeros(eps.shape[:-1])
        sig4, c4, dl, n = _return_3d(strain_to_mandel(eps, ezz), ep4, ak4, alpha, params)
        tangent = _stiffness_to_voigt(_restrict(c4))
        out = sig4[..., 2]
    else:
        lam = params.bulk_modulus - 2.0 * params.shear_modulus / 3.0
        g2 = 2.0 * params.shear_modulus
        ee_sum = (eps[..., 0] - ep_v[..., 0]) + (eps[..., 1] - ep_v[..., 1])
        ezz = ep4[..., 2] - lam / (lam + g2) * ee_sum
        lo = np.full(ezz.shape, -np.inf)
        hi = np.full(ezz.shape, np.inf)
        tol = params.local_tol * params.yield_stress
        while True:
            sig4, c4, dl, n = _return_3d(strain_to_mandel(eps, ezz), ep4, ak4, alpha, params)
            f = sig4[..., 2]
            done = np.abs(f) <= tol
            if np.all(done):
                break
            if iterations >= params.max_local_iter:
                raise NoConvergence("plane-stress update", iterations, float(np.max(np.abs(f))))
            iterations += 1
            hi = np.where(f > 0, np.minimum(hi, ezz), hi)
            lo = np.where(f < 0, np.maximum(lo, ezz), lo)
            trial = ezz - f / c4[..., 2, 2]
            bracketed = np.isfinite(lo) & np.isfinite(hi)
            outside = bracketed & ((trial < lo) | (trial > hi))
            mid = 0.5 * (np.where(bracketed, lo, 0.0) + np.where(bracketed, hi, 0.0))
            trial = np.where(outside, mid, trial)
            ezz = np.where(done, ezz, trial)
        tangent = _stiffness_to_voigt(_condense(c4))
        out = ezz

    tangent = 0.5 * (tangent + np.swapaxes(tangent, -1, -2))
    dep = mandel_to_strain(dl[..., None] * n)
    new_state = MaterialPointState(
        ep_v + dep,
        alpha + params.von_mises_constant * dl,
        ak_v + dep,
    )
    eps4 = strain_to_mandel(eps, ezz if params.plane_assumption == PLANE_STRESS else 0.0)
    energy = _incremental_energy(eps4, sig4, ep4 + dl[..., None] * n, new_state, dl, params)
    return UpdateResult(
        mandel_to_stress(sig4), new_state, dl, tangent, energy, out, iterations
    )


def _incremental_energy(eps4, sig4, ep4_new, state: MaterialPointState, dl, params: MaterialParams):
    elastic = 0.5 * np.sum((eps4 - ep4_new) * sig4, axis=-1)
    iso = 0.5 * params.isotropic_hardening * state.isotropic_var**2
    ak4 = _isochoric_mandel(state.kinematic_var)
    kin = 0.5 * params.kinematic_hardening * np.sum(ak4 * ak4, axis=-1)
    diss = params.yield_stress * params.von_mises_constant * dl
    return elastic + iso + kin + diss


# ---------------------------------------------------------------- inverse update

def _inverse_3d(sig4, ep4, ak4, alpha_i, params: MaterialParams):
    h = params.hardening_modulus
    xi = sig4 @ DEV4 - params.kinematic_hardening * ak4
    nxi = np.linalg.norm(xi, axis=-1)
    radius = _radius(alpha_i, params)
    phi = nxi - radius
    plastic = phi > TIE_TOL * params.yield_stress
    dl = np.where(plastic, phi / h, 0.0)
    safe = np.where(nxi > 0, nxi, 1.0)
    n = xi / safe[..., None]
    eps4 = sig4 @ _compliance_4(params) + ep4 + dl[..., None] * n
    nn = n[..., :, None] * n[..., None, :]
    ratio = np.where(plastic, radius / safe, 0.0)[..., None, None]
    d4 = _compliance_4(params) + np.where(plastic, 1.0 / h, 0.0)[..., None, None] * (
        (1.0 - ratio) * DEV4 + ratio * nn
    )
    return eps4, d4, dl, n


def inverse_state_update(stress, prior: MaterialPointState, params: MaterialParams) -> InverseResult:
    """Stress-driven update: strain as the gradient of the complementary incremental energy."""
    if not params.has_hardening:
        raise PerfectPlasticityUnsupported("the inverse map needs k_i > 0 or k_k > 0")
    sig = np.asarray(stress, dtype=float)
    ep_v = np.broadcast_to(prior.plastic_strain, sig.shape)
    ak_v = np.broadcast_to(prior.kinematic_var, sig.shape)
    alpha = np.broadcast_to(prior.isotropic_var, sig.shape[:-1])
    ep4 = _isochoric_mandel(ep_v)
    ak4 = _isochoric_mandel(ak_v)
    iterations = 0

    if params.plane_assumption == PLANE_STRESS:
        szz = np.zeros(sig.shape[:-1])
        eps4, d4, dl, n = _inverse_3d(stress_to_mandel(sig, szz), ep4, ak4, alpha, params)
        compliance = _compliance_to_voigt(_restrict(d4))
        out = eps4[..., 2]
    else:
        nu = params.poisson_ratio
        szz = nu * (sig[..., 0] + sig[..., 1])
        lo = np.full(szz.shape, -np.inf)
        hi = np.full(szz.shape, np.inf)
        tol = params.local_tol * params.yield_stress / params.youngs_modulus
        polished = np.zeros(szz.shape, dtype=bool)
        while True:
            eps4, d4, dl, n = _inverse_3d(stress_to_mandel(sig, szz), ep4, ak4, alpha, params)
            f = eps4[..., 2]
            done = (np.abs(f) <= tol) & polished
            polished |= np.abs(f) <= tol
            if np.all(done | (f == 0.0)):
                break
            if iterations >= params.max_local_iter:
                raise NoConvergence("plane-strain inverse update", iterations, float(np.max(np.abs(f))))
            iterations += 1
            hi = np.where(f > 0, np.minimum(hi, szz), hi)
            lo = np.where(f < 0, np.maximum(lo, szz), lo)
            trial = szz - f / d4[..., 2, 2]
            bracketed = np.isfinite(lo) & np.isfinite(hi)
            outside = bracketed & ((trial < lo) | (trial > hi))
            mid = 0.5 * (np.where(bracketed, lo, 0.0) + np.where(bracketed, hi, 0.0))
            trial = np.where(outside, mid, trial)
            szz = np.where(done | (f == 0.0), szz, trial)
        compliance = _compliance_to_voigt(_condense(d4))
        out = szz

    compliance = 0.5 * (compliance + np.swapaxes(compliance, -1, -2))
    dep = mandel_to_strain(dl[..., None] * n)
    new_state = MaterialPointState(
        ep_v + dep, alpha + params.von_mises_constant * dl, ak_v + dep
    )
    sig4 = stress_to_mandel(sig, szz)
    w = _incremental_energy(eps4, sig4, ep4 + dl[..., None] * n, new_state, dl, params)
    wstar = np.sum(sig4 * eps4, axis=-1) - w
    return InverseResult(mandel_to_strain(eps4), new_state, compliance, dl, wstar, out, iterations)


def plastic_strain_zz(plastic_strain) -> np.ndarray:
    """Out-of-plane plastic strain implied by isochoric flow."""
    ep = np.asarray(plastic_strain)
    return -(ep[..., 0] + ep[..., 1])


def yield_direction_plane_stress(stress) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Norm of the plane-stress deviator, its gradient and Hessian w.r.t. Voigt stress.

    The gradient is the plastic strain direction in engineering-shear Voigt form.
    """
    s = np.asarray(stress, dtype=float)
    ps = s @ PLANE_STRESS_PROJECTOR
    norm = np.sqrt(np.maximum(np.sum(s * ps, axis=-1), 0.0))
    safe = np.where(norm > 0, norm, 1.0)
    grad = ps / safe[..., None]
    hess = (PLANE_STRESS_PROJECTOR - grad[..., :, None] * grad[..., None, :]) / safe[..., None, None]
    return norm, grad, hess


PLANE_STRESS_PROJECTOR = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, 0.0], [0.0, 0.0, 6.0]]) / 3.0
