import numpy as np
import pytest
import scipy.linalg as sla

from mixedfem.benchmarks import BenchmarkSpec, build_benchmark
from mixedfem.solver import Mesh
from mixedfem.stability import (
    assemble_vnorm,
    domain_diameter,
    elastic_stiffness,
    infsup_test,
    kernel_check,
    minimal_supports,
    numerical_rank,
    sampled_infsup,
    smallest_eigenvalues,
)

from helpers import with_midsides

SQUARE = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), np.array([[0, 1, 2, 3]]))
QUAD = np.array([[0.0, 0.0], [2.2, 0.1], [2.0, 1.9], [0.2, 1.6]])


def cook_problem(tag, n):
    return build_benchmark(BenchmarkSpec("cook", (n,), tag))[0]


def test_domain_diameter_square():
    assert domain_diameter(SQUARE) == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_vnorm_translation_is_area():
    t = assemble_vnorm(SQUARE).toarray()
    v = np.tile([1.0, 0.0], 4)
    assert v @ t @ v == pytest.approx(1.0, rel=1e-13)
    assert np.allclose(t, t.T)
    assert np.all(np.linalg.eigvalsh(t) > 0)


def test_vnorm_linear_field_gradient_term():
    t = assemble_vnorm(SQUARE, length_scale=2.0).toarray()
    v = np.array([[x, 0.0] for x, _ in SQUARE.nodes]).ravel()  # u = (x, 0)
    # int x^2 over the unit square plus L^2 * int |grad u|^2
    assert v @ t @ v == pytest.approx(1.0 / 3.0 + 4.0, rel=1e-13)


def test_smallest_eigenvalues_match_dense():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((12, 12))
    k = a @ a.T + np.eye(12)
    b = rng.standard_normal((12, 12))
    t = b @ b.T + 12 * np.eye(12)
    ref = sla.eigh(k, t, eigvals_only=True)[:4]
    assert np.allclose(smallest_eigenvalues(k, t, 4), ref, rtol=1e-12)


def test_sampled_estimate_bounds_eigenvalue():
    problem = cook_problem("HR-Q4", 2)
    k = elastic_stiffness(problem, "HR-Q4")
    t = assemble_vnorm(problem.mesh)
    free = np.setdiff1d(np.arange(problem.mesh.n_dofs), minimal_supports(problem.mesh))
    k, t = k[free][:, free], t[free][:, free]
    lam = smallest_eigenvalues(k, t, 1)[0]
    est = sampled_infsup(k, t, n_samples=50, n_refine=2)
    assert est >= lam * (1 - 1e-8)
    assert est <= 1.05 * lam


def test_minimal_supports_remove_only_rigid_modes():
    problem = cook_problem("Q4", 2)
    k = elastic_stiffness(problem, "Q4").toarray()
    free = np.setdiff1d(np.arange(problem.mesh.n_dofs), minimal_supports(problem.mesh))
    vals = np.linalg.eigvalsh(k[np.ix_(free, free)])
    assert vals[0] > 1e-8 * vals[-1]
    assert len(minimal_supports(problem.mesh)) == 3


def test_unsupported_mesh_flags_zero_modes():
    problem = cook_problem("Q4", 2)
    report = infsup_test([problem], "Q4", supports="none")
    assert report.entries[0].flag == "zero"
    assert report.unstable


def test_infsup_rejects_unknown_supports():
    with pytest.raises(ValueError):
        infsup_test([cook_problem("Q4", 2)], "Q4", supports="pinned")


@pytest.mark.parametrize("tag", ["HR-Q4", "CM-Q4"])
def test_kernel_pian_sumihara_isostatic(tag):
    rep = kernel_check(tag, QUAD)
    assert rep.rank_c == 5 and rep.spurious_modes == 0 and rep.passed


def test_kernel_three_mode_variant_deficient():
    rep = kernel_check("HR-Q4-3", QUAD)
    assert rep.rank_c == 3
    assert rep.spurious_modes == 2
    assert not rep.passed


@pytest.mark.parametrize("tag", ["Q4", "ES-Q4"])
def test_kernel_vacuous_for_eliminated_stress(tag):
    rep = kernel_check(tag, QUAD)
    assert rep.vacuous and rep.passed


def test_kernel_nodal_force_element():
    rep = kernel_check("HW-Q8-D", with_midsides(QUAD))
    assert rep.rank_c == 13 and rep.passed


def test_numerical_rank():
    assert numerical_rank(np.diag([1.0, 1e-3, 1e-14])) == 2
    assert numerical_rank(np.zeros((3, 3))) == 0


def test_stability_csv(tmp_path):
    report = infsup_test([cook_problem("HR-Q4", 2)], "HR-Q4", supports="minimal")
    path = tmp_path / "s.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mesh_h,lambda_min,rank_C,flag"
    assert lines[1].endswith(",5,ok")
