"""
Curl-free local relaxation for the periodic Poisson equation.

The electric field is computed directly on a staggered grid: a
Gauss-consistent initial field is relaxed by rotational flux updates on
cells, hierarchical blocks and whole lines until its energy stops dropping.
"""
from hlrelax.grid import (
    EdgeCoeff, GridSpec, NodeField, StaggeredField, discrete_curl,
    discrete_div, discrete_gradient, edge_coeff, energy, max_curl,
)
from hlrelax.relax import RelaxMethod, SweepTrace, relax_pass
from hlrelax.solver import (
    Problem, SolveReport, diagnostics, init_field, recover_potential, solve,
    warm_start,
)

__all__ = [
    "GridSpec", "NodeField", "StaggeredField", "EdgeCoeff", "edge_coeff",
    "discrete_div", "discrete_gradient", "discrete_curl", "max_curl",
    "energy", "RelaxMethod", "SweepTrace", "relax_pass", "Problem",
    "SolveReport", "init_field", "solve", "warm_start", "recover_potential",
    "diagnostics",
]

__version__ = "0.1.0"
