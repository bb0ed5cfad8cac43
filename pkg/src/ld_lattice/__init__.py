"""Numerical minimization and small-coupling asymptotics for Josephson vortex
lattices in periodic and finite stacks of superconducting planes."""

from .core import (BIPERIODIC, FINITE_LAYER, Configuration, Discretization,
                   DimensionTooLargeError, FluxMismatchError, GeometryClass,
                   InadmissibleGeometryError, LatticeGeometry, ModelParams,
                   build_geometry, classify_geometry, make_geometry,
                   synthesize_plane_zero, zero_configuration)
from .fields import (FieldSet, RawState, apply_gauge, export_fieldset,
                     flux_integral, gauge_fix, observables,
                     raw_from_configuration, solve_periodic_poisson,
                     stokes_phase)
from .energy import (EnergyBreakdown, Tangent, el_residuals, energy,
                     energy_and_gradient, energy_per_area, gradient)
from .asymptotics import (ExpansionReport, FirstOrderCorrection, PhaseVector,
                          expansion_constants, first_order,
                          first_order_configuration, manifold_point,
                          predicted_fields,
                          second_order_coefficient_quadrature,
                          solve_gap_constant_system, wrap_angle)
from .frustration import (ReducedMinimum, ReducedProblem, brute_force_F,
                          classify_optimality, evaluate_F,
                          finite_layer_minimum, minimize_F, reduced_hessian,
                          scan)
from .minimize import (ComparisonReport, InsufficientDataError, MinimizeResult,
                       SolverOptions, compare_with_asymptotics,
                       continuation_in_r, extract_phases,
                       initial_configuration, load_checkpoint, minimize_energy,
                       richardson_extrapolate, save_checkpoint)

__version__ = "0.1.0"
