"""Independent reference computations used by the test suite.

Nothing here imports the package's constitutive or element kernels; every
oracle rebuilds what it needs from elementary definitions.
"""

from __future__ import annotations

import numpy as np

SQ2 = np.sqrt(2.0)

# orthonormal basis (tensor inner product) of isochoric plastic strains with
# zero out-of-plane shear; components ordered xx, yy, zz, xy(tensor)
ISO_BASIS = np.array([
    [1.0, -1.0, 0.0, 0.0] / SQ2,
    [1.0, 1.0, -2.0, 0.0] / np.sqrt(6.0),
    [0.0, 0.0, 0.0, 1.0 / SQ2],
])


def tensor_dot(a, b):
    """Full 3x3 double contraction for (xx, yy, zz, xy) component arrays."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2] + 2.0 * a[..., 3] * b[..., 3]


def voigt_plastic_to_tensor(ep):
    """Voigt in-plane plastic strain (engineering shear) -> isochoric tensor components."""
    ep = np.asarray(ep, dtype=float)
    return np.array([ep[0], ep[1], -(ep[0] + ep[1]), 0.5 * ep[2]])


def lame(e, nu):
    return e * nu / ((1 + nu) * (1 - 2 * nu)), e / (2 * (1 + nu))


def plane_stress_stress(eps_voigt, ep_tensor, e, nu):
    """Stress for zero out-of-plane stress, from 3D Hooke's law with eps_zz eliminated."""
    lam, mu = lame(e, nu)
    exx = eps_voigt[0] - ep_tensor[0]
    eyy = eps_voigt[1] - ep_tensor[1]
    exy = 0.5 * eps_voigt[2] - ep_tensor[3]
    ezz = -lam / (lam + 2 * mu) * (exx + eyy)
    tr = exx + eyy + ezz
    sxx = lam * tr + 2 * mu * exx
    syy = lam * tr + 2 * mu * eyy
    sxy = 2 * mu * exy
    elastic = np.array([exx, eyy, ezz, exy])
    return np.array([sxx, syy, sxy]), elastic


def incremental_energy_oracle(eps_voigt, ep_prior_voigt, alpha_prior, e, nu, sy, ki, c=np.sqrt(2 / 3),
                              grid=24):
    """Brute-force minimizer of the incremental energy over isochoric plastic increments.

    The increment is x @ ISO_BASIS with x in R^3. For a fixed direction the energy
    is a convex quadratic in the length, so a grid over the two direction angles
    gives a starting point, which damped Newton on the stationarity condition
    then refines. Returns (stress, d_plastic_tensor, d_alpha, energy).
    """
    lam, mu = lame(e, nu)
    ep0 = voigt_plastic_to_tensor(ep_prior_voigt)

    def elastic_energy(x):
        _, el = plane_stress_stress(eps_voigt, ep0 + x @ ISO_BASIS, e, nu)
        tr = el[0] + el[1] + el[2]
        return 0.5 * lam * tr ** 2 + mu * tensor_dot(el, el)

    def energy(x):
        da = c * np.linalg.norm(x)
        return elastic_energy(x) + 0.5 * ki * (alpha_prior + da) ** 2 + sy * da

    # the elastic part is an exact quadratic: recover gradient and Hessian at 0
    h = 1e-3
    w0 = elastic_energy(np.zeros(3))
    eye = np.eye(3)
    g = np.array([(elastic_energy(h * eye[i]) - elastic_energy(-h * eye[i])) / (2 * h) for i in range(3)])
    a = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            a[i, j] = (elastic_energy(h * (eye[i] + eye[j])) - elastic_energy(h * (eye[i] - eye[j]))
                       - elastic_energy(h * (eye[j] - eye[i])) + elastic_energy(-h * (eye[i] + eye[j]))) / (4 * h * h)
    a = 0.5 * (a + a.T)

    def along(n):
        # energy(r n) = const + b r + 0.5 k r^2 for r >= 0
        b = g @ n + c * (ki * alpha_prior + sy)
        k = n @ a @ n + ki * c * c
        r = max(0.0, -b / k)
        return r, w0 + b * r + 0.5 * k * r * r + 0.5 * ki * alpha_prior ** 2

    ths = np.linspace(0, np.pi, grid)
    phs = np.linspace(0, 2 * np.pi, 2 * grid, endpoint=False)
    best = (np.inf, None)
    for th in ths:
        for ph in phs:
            n = np.array([np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)])
            r, val = along(n)
            if val < best[0]:
                best = (val, r * n)
    x = best[1]
    if np.linalg.norm(x) > 0:
        for _ in range(100):
            r = np.linalg.norm(x)
            u = x / r
            s = c * (ki * (alpha_prior + c * r) + sy)
            grad = g + a @ x + s * u
            hess = a + ki * c * c * np.outer(u, u) + s / r * (np.eye(3) - np.outer(u, u))
            step = -np.linalg.solve(hess, grad)
            t = 1.0
            while np.linalg.norm(x + t * step) <= 0.0 or energy(x + t * step) > energy(x) + 1e-16 * abs(energy(x)):
                t *= 0.5
                if t < 1e-12:
                    break
            x = x + t * step
            if np.linalg.norm(t * step) <= 1e-15 * np.linalg.norm(x):
                break
    dep = x @ ISO_BASIS
    stress, _ = plane_stress_stress(eps_voigt, ep0 + dep, e, nu)
    return stress, dep, c * np.linalg.norm(x), energy(x)


def sampled_dissipation(dep_tensor, d_alpha, sy, c=np.sqrt(2 / 3), n_dir=40000, n_q=400, seed=1):
    """Sup of sigma:dep + q*d_alpha over sampled points of the yield surface ||dev sigma|| = c(sy - q)."""
    rng = np.random.default_rng(seed)
    # deviatoric directions restricted to the subspace the increment lives in
    dirs = rng.standard_normal((n_dir, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    proj = np.array([tensor_dot(dep_tensor, b) for b in ISO_BASIS])
    work_per_radius = dirs @ proj  # dev sigma = radius * sum dirs_k basis_k
    q = np.concatenate([np.linspace(-10 * sy, sy, n_q), [sy]])
    radius = c * (sy - q)
    vals = radius[:, None] * work_per_radius[None, :] + (q * d_alpha)[:, None]
    return float(vals.max())


def principal_yield_value(stress_voigt, alpha, sy, ki, c=np.sqrt(2 / 3)):
    """Plane-stress von Mises yield value from principal stresses."""
    s = np.array([[stress_voigt[0], stress_voigt[2], 0.0],
                  [stress_voigt[2], stress_voigt[1], 0.0],
                  [0.0, 0.0, 0.0]])
    p = np.linalg.eigvalsh(s)
    dev = p - p.mean()
    return float(np.linalg.norm(dev) - c * (sy + ki * alpha))


def plane_stress_hooke(e, nu):
    return e / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def central_difference_jacobian(fun, x, step):
    """Columns of d fun / d x by central differences."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    jac = np.zeros((f0.size, x.size))
    for j in range(x.size):
        d = np.zeros_like(x)
        d[j] = step
        jac[:, j] = (np.asarray(fun(x + d)) - np.asarray(fun(x - d))).ravel() / (2 * step)
    return jac


def rigid_modes_vector(coords):
    """Nodal vectors of the two translations and the infinitesimal rotation about the origin."""
    xy = np.asarray(coords, dtype=float)
    n = len(xy)
    modes = np.zeros((3, 2 * n))
    modes[0, 0::2] = 1.0
    modes[1, 1::2] = 1.0
    modes[2, 0::2] = -xy[:, 1]
    modes[2, 1::2] = xy[:, 0]
    return modes
