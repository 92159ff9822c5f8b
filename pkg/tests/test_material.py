import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedfem.errors import PerfectPlasticityUnsupported
from mixedfem.material import (
    PLANE_STRAIN,
    MaterialParams,
    MaterialPointState,
    dissipation_increment,
    elastic_tensor,
    inverse_state_update,
    state_update,
    yield_value,
)

from oracles import (
    central_difference_jacobian,
    incremental_energy_oracle,
    plane_stress_hooke,
    principal_yield_value,
    sampled_dissipation,
    voigt_plastic_to_tensor,
)

COOK = MaterialParams(70.0, 1.0 / 3.0, 0.243, 0.2)
C = np.sqrt(2.0 / 3.0)
EPS_Y = 0.243 / 70.0

finite = dict(allow_nan=False, allow_infinity=False)
strain_st = st.lists(st.floats(-6 * EPS_Y, 6 * EPS_Y, **finite), min_size=3, max_size=3).map(np.array)
stress_st = st.lists(st.floats(-1.0, 1.0, **finite), min_size=3, max_size=3).map(np.array)


def random_prior(rng, scale=1e-3):
    ep = rng.uniform(-1, 1, 3) * scale
    norm = np.linalg.norm(voigt_plastic_to_tensor(ep) * [1, 1, 1, np.sqrt(2)])
    return MaterialPointState(ep, np.array(C * norm * rng.uniform(1.0, 2.0)), np.zeros(3))


def test_elastic_tensor_plane_stress_entry():
    assert elastic_tensor(COOK)[0, 0] == pytest.approx(78.75, rel=1e-14)


def test_elastic_tensor_zero_poisson_is_diagonal():
    c = elastic_tensor(MaterialParams(10.0, 0.0, 1.0))
    assert np.allclose(c, np.diag([10.0, 10.0, 5.0]), atol=1e-13)


def test_elastic_tensor_symmetric_and_matches_hooke():
    c = elastic_tensor(COOK)
    assert np.array_equal(c, c.T)
    assert np.allclose(c, plane_stress_hooke(70.0, 1 / 3), rtol=1e-13)


def test_plane_strain_tensor():
    e, nu = 70.0, 0.3
    c = elastic_tensor(MaterialParams(e, nu, 1.0, plane_assumption=PLANE_STRAIN))
    f = e / ((1 + nu) * (1 - 2 * nu))
    assert np.allclose(c, f * np.array([[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, (1 - 2 * nu) / 2]]), rtol=1e-13)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 0.3, 1.0)
    with pytest.raises(ValueError):
        MaterialParams(1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        MaterialParams(1.0, 0.3, 1.0, isotropic_hardening=-1.0)


def test_uniaxial_onset_yield_value_vanishes():
    phi = yield_value(np.array([0.243, 0.0, 0.0]), MaterialPointState.virgin(), COOK)
    assert abs(phi) <= 1e-15 * 0.243


def test_yield_value_at_origin():
    assert yield_value(np.zeros(3), MaterialPointState.virgin(), COOK) == pytest.approx(-C * 0.243, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(stress_st, st.floats(0.0, 0.1, **finite))
def test_yield_value_matches_principal_stress_oracle(sig, alpha):
    state = MaterialPointState(np.zeros(3), np.array(alpha), np.zeros(3))
    ours = float(yield_value(sig, state, COOK))
    assert ours == pytest.approx(principal_yield_value(sig, alpha, 0.243, 0.2), abs=1e-14)


def test_elastic_update():
    eps = np.array([1e-3, 0.0, 0.0])
    res = state_update(eps, MaterialPointState.virgin(), COOK)
    c = elastic_tensor(COOK)
    assert np.allclose(res.stress, c @ eps, rtol=1e-13)
    assert res.plastic_multiplier == 0.0
    assert np.allclose(res.tangent, c, rtol=1e-13)


def test_zero_strain_update():
    res = state_update(np.zeros(3), MaterialPointState.virgin(), COOK)
    assert np.all(res.stress == 0.0)
    assert res.plastic_multiplier == 0.0
    assert res.incremental_energy_value == 0.0


def test_uniaxial_plastic_update_matches_energy_oracle():
    eps = np.array([6e-3, 0.0, 0.0])
    res = state_update(eps, MaterialPointState.virgin(), COOK)
    sig, dep, da, w = incremental_energy_oracle(eps, np.zeros(3), 0.0, 70.0, 1 / 3, 0.243, 0.2)
    assert res.plastic_multiplier > 0
    assert np.allclose(res.stress, sig, rtol=1e-6, atol=1e-6 * np.linalg.norm(sig))
    assert float(res.incremental_energy_value) == pytest.approx(w, rel=1e-10)
    assert float(res.new_state.isotropic_var) == pytest.approx(da, rel=1e-8)


def test_batched_update_matches_pointwise():
    rng = np.random.default_rng(5)
    eps = rng.uniform(-5, 5, (7, 3)) * EPS_Y
    batch = state_update(eps, MaterialPointState.virgin((7,)), COOK)
    for i in range(7):
        single = state_update(eps[i], MaterialPointState.virgin(), COOK)
        assert np.allclose(batch.stress[i], single.stress, rtol=1e-13, atol=1e-16)
        assert np.allclose(batch.tangent[i], single.tangent, rtol=1e-12, atol=1e-14)


@settings(max_examples=80, deadline=None)
@given(strain_st)
def test_kkt_conditions(eps):
    res = state_update(eps, MaterialPointState.virgin(), COOK)
    phi = float(yield_value(res.stress, res.new_state, COOK))
    dl = float(res.plastic_multiplier)
    assert dl >= 0.0
    assert phi <= 1e-10 * 0.243
    assert abs(dl * phi) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(strain_st)
def test_tangent_symmetric(eps):
    t = state_update(eps, MaterialPointState.virgin(), COOK).tangent
    assert np.allclose(t, t.T, rtol=0, atol=1e-12 * np.abs(t).max())


@settings(max_examples=40, deadline=None)
@given(strain_st)
def test_tangent_matches_finite_differences(eps):
    virgin = MaterialPointState.virgin()
    res = state_update(eps, virgin, COOK)
    phi_trial = float(yield_value(elastic_tensor(COOK) @ eps, virgin, COOK))
    # stay away from the elastic/plastic switch where the map is not differentiable
    if abs(phi_trial) < 1e-3 * 0.243 or np.linalg.norm(eps) < 1e-6:
        return
    step = 1e-7 * np.linalg.norm(eps)
    fd = central_difference_jacobian(lambda e: state_update(e, virgin, COOK).stress, eps, step)
    assert np.linalg.norm(fd - res.tangent) <= 1e-5 * np.linalg.norm(res.tangent)


@settings(max_examples=60, deadline=None)
@given(strain_st, st.integers(0, 2 ** 31))
def test_inverse_roundtrip(eps, seed):
    prior = random_prior(np.random.default_rng(seed))
    direct = state_update(eps, prior, COOK)
    inv = inverse_state_update(direct.stress, prior, COOK)
    assert np.allclose(inv.strain, eps, rtol=0, atol=1e-8 * max(np.linalg.norm(eps), EPS_Y))
    assert np.allclose(inv.new_state.plastic_strain, direct.new_state.plastic_strain, atol=1e-12)


def test_inverse_elastic_branch_and_zero():
    sig = np.array([0.05, -0.02, 0.01])
    inv = inverse_state_update(sig, MaterialPointState.virgin(), COOK)
    assert np.allclose(inv.strain, np.linalg.solve(elastic_tensor(COOK), sig), rtol=1e-12)
    assert inv.plastic_multiplier == 0.0
    assert np.all(inverse_state_update(np.zeros(3), MaterialPointState.virgin(), COOK).strain == 0.0)


def test_inverse_compliance_is_inverse_of_tangent():
    eps = np.array([4e-3, -1e-3, 2e-3])
    direct = state_update(eps, MaterialPointState.virgin(), COOK)
    inv = inverse_state_update(direct.stress, MaterialPointState.virgin(), COOK)
    assert np.allclose(inv.compliance_tangent @ direct.tangent, np.eye(3), atol=1e-9)


def test_inverse_requires_hardening():
    with pytest.raises(PerfectPlasticityUnsupported):
        inverse_state_update(np.zeros(3), MaterialPointState.virgin(), MaterialParams(70.0, 0.3, 0.243))


def test_monotone_isotropic_variable():
    rng = np.random.default_rng(2)
    state = MaterialPointState.virgin()
    eps = np.zeros(3)
    for _ in range(30):
        eps = eps + rng.uniform(-1, 1, 3) * EPS_Y
        new = state_update(eps, state, COOK).new_state
        assert new.isotropic_var >= state.isotropic_var
        state = new


def test_dissipation_zero_and_homogeneous():
    assert dissipation_increment(np.zeros(3), 0.0, COOK) == 0.0
    dep = np.array([1e-3, -4e-4, 3e-4])
    da = C * np.linalg.norm(voigt_plastic_to_tensor(dep) * [1, 1, 1, np.sqrt(2)])
    assert dissipation_increment(2 * dep, 2 * da, COOK) == 2 * dissipation_increment(dep, da, COOK)


def test_dissipation_inadmissible_is_infinite():
    assert np.isinf(dissipation_increment(np.array([1e-3, 0, 0]), 0.0, COOK))


def test_dissipation_matches_sampled_support_function():
    rng = np.random.default_rng(11)
    for _ in range(5):
        dep = rng.uniform(-1, 1, 3) * 1e-3
        t = voigt_plastic_to_tensor(dep)
        da = C * np.sqrt(t[0] ** 2 + t[1] ** 2 + t[2] ** 2 + 2 * t[3] ** 2) * rng.uniform(1.0, 1.5)
        ours = float(dissipation_increment(dep, da, COOK))
        assert ours == pytest.approx(sampled_dissipation(t, da, 0.243), rel=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e-2, **finite), st.sampled_from([2.0, 4.0, 0.5, 0.25, 8.0]))
def test_dissipation_exact_homogeneity_property(mag, scale):
    dep = np.array([mag, -0.3 * mag, 0.7 * mag])
    da = 2.0 * mag
    assert dissipation_increment(scale * dep, scale * da, COOK) == scale * dissipation_increment(dep, da, COOK)


def test_energy_oracle_agreement_with_history():
    rng = np.random.default_rng(21)
    for _ in range(10):
        prior = random_prior(rng)
        eps = rng.uniform(-1, 1, 3) * EPS_Y * rng.uniform(0, 5)
        res = state_update(eps, prior, COOK)
        sig, *_ = incremental_energy_oracle(eps, prior.plastic_strain, float(prior.isotropic_var),
                                            70.0, 1 / 3, 0.243, 0.2)
        assert np.linalg.norm(res.stress - sig) <= 1e-6 * np.linalg.norm(sig)


def test_kinematic_hardening_kkt_and_roundtrip():
    params = MaterialParams(70.0, 0.3, 0.243, 0.1, kinematic_hardening=0.5)
    state = MaterialPointState.virgin()
    eps = np.array([5e-3, -1e-3, 2e-3])
    res = state_update(eps, state, params)
    assert res.plastic_multiplier > 0
    assert yield_value(res.stress, res.new_state, params) <= 1e-10 * 0.243
    inv = inverse_state_update(res.stress, state, params)
    assert np.allclose(inv.strain, eps, atol=1e-8 * np.linalg.norm(eps))
