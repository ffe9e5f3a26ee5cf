"""Fully discrete semi-Lagrangian solver for deterministic price-formation MFGs."""
from .grid import Grid, basis_eval, interpolate, locate_cell
from .model import (ModelError, ModelSpec, SupplySpec, make_quadratic_model, make_quartic_model,
                    normalize_initial_density, supply_eval)
from .solver import (DiscreteSolution, InvariantViolation, SolverConfig, fixed_point_solve,
                     hj_backward_sweep, minimize_node, price_update, transport_forward)

__version__ = "0.1.0"
