"""Element formulation descriptors and the registry of named elements."""

from __future__ import annotations

from dataclasses import dataclass, replace

ALGORITHMS = ("displacement", "hw_identical", "hw_nodal_force", "es", "cm", "hr")
CM_SOLVERS = ("return_mapping", "interior_point", "sqp")


@dataclass(frozen=True)
class ElementFormulation:
    """Binds interpolations to a state-determination algorithm.

    stress: None, "pian_sumihara", "constant" or "airy".
    multiplier: "gauss_pointwise" or "piecewise_constant" (CM only).
    """

    tag: str
    n_nodes: int
    algorithm: str
    stress: str | None = None
    quad_order: int = 2
    airy_degree: int = 2
    airy_extra: tuple = ((3, 0), (3, 1))
    n_subdomains: int = 9
    subdomain_rule: int = 2
    multiplier: str = "gauss_pointwise"
    multiplier_subdomains: int = 1
    cm_solver: str = "return_mapping"
    hr_relaxed: bool = False
    tol: float = 1e-10
    max_iter: int = 30
    max_sweeps: int = 20
    ip_variant: str = "simplified"
    ip_eps_lambda: float = 1e-12
    ip_theta: float = 0.95
    ip_eta: float = 0.5
    sqp_hessian: str = "lagrangian"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.n_nodes not in (4, 8):
            raise ValueError("only 4- and 8-node quadrilaterals are supported")
        if self.cm_solver not in CM_SOLVERS:
            raise ValueError(f"unknown CM solver {self.cm_solver!r}")
        if self.algorithm in ("hw_identical", "hw_nodal_force", "cm", "hr") and self.stress is None:
            raise ValueError(f"{self.algorithm} needs a stress basis")

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def with_options(self, **kwargs) -> "ElementFormulation":
        return replace(self, **kwargs)


FORMULATIONS: dict[str, ElementFormulation] = {
    f.tag: f
    for f in [
        ElementFormulation("Q4", 4, "displacement", quad_order=2),
        ElementFormulation("Q8", 8, "displacement", quad_order=3),
        ElementFormulation("HW-Q8-D", 8, "hw_nodal_force", stress="airy", quad_order=3),
        ElementFormulation("ES-Q4", 4, "es", quad_order=2),
        ElementFormulation("CM-Q4", 4, "cm", stress="pian_sumihara", quad_order=2),
        ElementFormulation("HR-Q4", 4, "hr", stress="pian_sumihara", quad_order=2),
        # auxiliary variants used by tests and the stability study
        ElementFormulation("HW-Q4-I", 4, "hw_identical", stress="pian_sumihara", quad_order=2),
        ElementFormulation("HR-Q4-3", 4, "hr", stress="constant", quad_order=2),
        ElementFormulation("CM-Q4-E", 4, "cm", stress="pian_sumihara", quad_order=2,
                           multiplier="piecewise_constant", multiplier_subdomains=1),
    ]
}

BENCHMARK_ELEMENTS = ("Q4", "Q8", "HW-Q8-D", "ES-Q4", "CM-Q4", "HR-Q4")
MIXED_ELEMENTS = ("HW-Q8-D", "ES-Q4", "CM-Q4", "HR-Q4")


def get_formulation(tag: str, **options) -> ElementFormulation:
    try:
        base = FORMULATIONS[tag]
    except KeyError:
        raise ValueError(f"unknown element tag {tag!r}; known: {sorted(FORMULATIONS)}") from None
    return base.with_options(**options) if options else base
