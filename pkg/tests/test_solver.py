import numpy as np
import pytest
import scipy.sparse as sp

from mixedfem.benchmarks import BenchmarkSpec, build_benchmark, mesh_cook
from mixedfem.elements import BENCHMARK_ELEMENTS
from mixedfem.solver import (
    AnalysisConfig,
    Dirichlet,
    Mesh,
    Model,
    Problem,
    Traction,
    assemble,
    consistent_edge_loads,
    run_analysis,
)

from helpers import COOK, with_midsides


def cook(tag, n=2, **kw):
    return build_benchmark(BenchmarkSpec("cook", (n,), tag, **kw))


def single_element_problem(n_nodes=4):
    q4 = np.array([[0.0, 0.0], [2.0, 0.2], [1.8, 2.1], [0.1, 1.7]])
    coords = q4 if n_nodes == 4 else with_midsides(q4)
    mesh = Mesh(coords, np.arange(len(coords))[None])
    return Problem(mesh, COOK, dirichlet=())


@pytest.mark.parametrize("tag", BENCHMARK_ELEMENTS)
def test_zero_load_zero_residual(tag):
    problem, config = cook(tag)
    model = Model(problem, config)
    r, k, _ = assemble(model, model.virgin_state(), 0.0)
    assert np.all(r == 0.0)


@pytest.mark.parametrize("tag", BENCHMARK_ELEMENTS)
def test_free_element_has_three_zero_modes(tag):
    from mixedfem.elements import get_formulation

    problem = single_element_problem(get_formulation(tag).n_nodes)
    model = Model(problem, AnalysisConfig(tag))
    _, k, _ = assemble(model, model.virgin_state(), 0.0)
    vals = np.linalg.eigvalsh(k.toarray())
    floor = 1e-10 * vals[-1]
    assert np.sum(np.abs(vals) <= floor) == 3
    assert np.all(vals > -floor)


@pytest.mark.parametrize("tag", BENCHMARK_ELEMENTS)
def test_global_tangent_symmetric_after_plastic_run(tag):
    problem, config = cook(tag, increments=10)
    result = run_analysis(problem, config)
    assert result.completed
    _, k, res = assemble(result.model, result.state)
    assert np.any(result.state.history.state.isotropic_var > 0)
    asym = abs(k - k.T).max()
    assert asym <= 1e-10 * abs(k).max()


@pytest.mark.parametrize("tag", BENCHMARK_ELEMENTS)
def test_elastic_step_one_iteration(tag):
    problem, config = cook(tag, material=dict(yield_stress=1e6), increments=1)
    result = run_analysis(problem, config)
    assert result.completed and result.records[0].global_iters == 1


@pytest.mark.parametrize("tag", ["CM-Q4", "HW-Q8-D", "Q4"])
def test_runs_are_deterministic(tag):
    a = run_analysis(*cook(tag, increments=6))
    b = run_analysis(*cook(tag, increments=6))
    assert np.array_equal(a.state.u, b.state.u)
    assert [r.reaction for r in a.records] == [r.reaction for r in b.records]


@pytest.mark.parametrize("tag", ["Q4", "ES-Q4", "HR-Q4"])
def test_reaction_balances_applied_load(tag):
    problem, config = cook(tag, increments=8)
    result = run_analysis(problem, config)
    for rec in result.records:
        # reaction = internal minus external force at the clamped DOFs
        assert rec.reaction == pytest.approx(-1.8 * rec.load_factor, rel=1e-7)


def test_relaxed_hr_matches_full_hr():
    full = run_analysis(*cook("HR-Q4", increments=10, tol=1e-11))
    relaxed = run_analysis(*cook("HR-Q4", increments=10, tol=1e-11, hr_relaxed=True))
    assert full.completed and relaxed.completed
    scale = np.abs(full.state.u).max()
    assert np.abs(full.state.u - relaxed.state.u).max() <= 1e-8 * scale


def test_quadratic_convergence_in_plastic_step():
    problem, config = cook("CM-Q4", n=4, increments=10, tol=1e-12)
    result = run_analysis(problem, config)
    rates = []
    for rec in result.records[3:]:
        log = np.array(rec.residual_log)
        for prev, cur in zip(log[:-1], log[1:]):
            # substep logs are concatenated; a jump up marks a new Newton loop
            if 1e-12 < cur < prev < 1e-2:
                rates.append(cur / prev ** 2)
    assert rates and max(rates) < 1e3


def test_nonconvergence_reports_partial_history():
    problem, config = cook("Q4", increments=2, max_global_iter=1)
    result = run_analysis(problem, config)
    assert not result.completed
    assert len(result.records) < 2


def test_displacement_control_reaction():
    problem, config = build_benchmark(BenchmarkSpec("plate", (2, 4), "Q4", increments=4))
    result = run_analysis(problem, config)
    assert result.completed
    assert [r.load_factor for r in result.records] == [0.25, 0.5, 0.75, 1.0]
    assert result.records[-1].control_disp == pytest.approx(6.15, rel=1e-12)
    assert all(r.reaction > 0 for r in result.records)


def test_consistent_edge_load_total():
    for n_nodes in (4, 8):
        mesh = mesh_cook(3, n_nodes)
        f = consistent_edge_loads(mesh, "loaded", (0.0, 1.0 / 16.0))
        assert f[1::2].sum() == pytest.approx(1.0, rel=1e-13)
        assert f[0::2].sum() == 0.0


def test_model_rejects_wrong_node_count():
    problem, _ = cook("Q4")
    with pytest.raises(ValueError):
        Model(problem, AnalysisConfig("Q8"))


def test_config_validation():
    with pytest.raises(ValueError):
        AnalysisConfig("Q4", increments=0)
    with pytest.raises(ValueError):
        AnalysisConfig("Q4", control="arc")


def test_patch_constant_stress_global():
    # 2x2 distorted patch, linear boundary displacements, interior node free
    nodes = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1.2, 0.8], [2, 1], [0, 2], [1, 2], [2, 2]], dtype=float)
    elements = np.array([[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6], [4, 5, 8, 7]])
    boundary = [0, 1, 2, 3, 5, 6, 7, 8]
    grad = np.array([[1.0, 0.3], [-0.2, 0.5]]) * 1e-4
    sets = {f"n{i}": np.array([i]) for i in boundary}
    bcs = []
    for i in boundary:
        disp = grad @ nodes[i]
        bcs += [Dirichlet(f"n{i}", 0, disp[0]), Dirichlet(f"n{i}", 1, disp[1])]
    problem = Problem(Mesh(nodes, elements, sets), COOK, tuple(bcs))
    result = run_analysis(problem, AnalysisConfig("Q4", increments=1, control="displacement"))
    assert np.allclose(result.state.u[8:10], grad @ nodes[4], rtol=1e-10)


def test_traction_dataclass_load_vector():
    mesh = mesh_cook(2)
    problem = Problem(mesh, COOK, (Dirichlet("clamped", 0), Dirichlet("clamped", 1)),
                      (Traction("loaded", (0.0, 1.0 / 16.0)),))
    model = Model(problem, AnalysisConfig("Q4"))
    assert model.external_force(0.5)[1::2].sum() == pytest.approx(0.5)
    assert isinstance(model.assemble(np.zeros(model.n_dofs), model.virgin_state().history, 0.0)[1], sp.csr_matrix)
