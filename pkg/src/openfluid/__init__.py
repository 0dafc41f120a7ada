"""Finite-difference laboratory for fluids with permeable boundaries."""

from .brackets import (DiscreteFunctional, catalogue, extended_evolution_rate, functional_derivative,
                       hamiltonian_functional, lie_poisson_bracket)
from .budgets import all_budgets, boundary_form_equivalence, energy_budget, energy_split_budget, quantity_budget
from .dynamics import apply_boundary_conditions, cfl_limit, interior_tendency, step
from .grid import Field, make_grid
from .models import Model, State
from .sources import BulkSources, SourceSet, make_flux_spec
from .thermo import StateEquation

__version__ = "0.1.0"
