"""Element formulations, operators and state determinations."""

from .formulation import (BENCHMARK_ELEMENTS, FORMULATIONS, MIXED_ELEMENTS, ElementFormulation,
                          get_formulation)
from .operators import ElementOperators, RigidBodyFilter, build_operators, rigid_body_filter, rigid_modes
from .state import (ElementHistory, ElementResult, cm_state_ip, cm_state_return_map, cm_state_sqp,
                    displacement_element_state, element_state, es_state, hr_state, hr_state_relaxed,
                    hw_identical_state, hw_nodal_force_state, virgin_history)

__all__ = [
    "BENCHMARK_ELEMENTS", "FORMULATIONS", "MIXED_ELEMENTS", "ElementFormulation", "get_formulation",
    "ElementOperators", "RigidBodyFilter", "build_operators", "rigid_body_filter", "rigid_modes",
    "ElementHistory", "ElementResult", "cm_state_ip", "cm_state_return_map", "cm_state_sqp",
    "displacement_element_state", "element_state", "es_state", "hr_state", "hr_state_relaxed",
    "hw_identical_state", "hw_nodal_force_state", "virgin_history",
]
