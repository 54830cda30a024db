"""Finite-volume Callias-type index theorems on lattice models."""
from .calculus import (SWITCH_KINDS, InvertibilityCertificate, SmoothFunction, SwitchFunction, apply_function,
                       bounded_transform, check_asymptotic_invertibility, commutator_transfer_bound,
                       locality_profile, potential_unitary, switch_function, unitary_phase_function)
from .experiments import (EXPERIMENTS, ExperimentConfig, IndexReport, property_suite, run_experiment)
from .flow import (FlowReport, OperatorPath, essential_codimension, index_via_mass_flip, spectral_flow,
                   straight_line_flow, winding_cocycle)
from .localizer import (CalliasSetup, Inertia, Window, callias_operator, compress_to_window,
                        even_callias_operator, inertia, kappa0, kernel_count_index, phase_space_window,
                        signature_index_odd, spectral_localizer)
from .operators import (GeneralOperator, HermitianOperator, LatticeModel, PositionDerivation, TraceWeights,
                        build_lattice, dirac_operator, magnetic_shifts, weighted_trace)
from .pairings import (ChiralProjectionData, boundary_invariant, chern_number, chiral_projection, even_pairing,
                       nc_winding, odd_index_pairing, skew_corner_index)

__version__ = "0.1.0"

__all__ = [
    "SWITCH_KINDS",
    "InvertibilityCertificate",
    "SmoothFunction",
    "SwitchFunction",
    "apply_function",
    "bounded_transform",
    "check_asymptotic_invertibility",
    "commutator_transfer_bound",
    "locality_profile",
    "potential_unitary",
    "switch_function",
    "unitary_phase_function",
    "EXPERIMENTS",
    "ExperimentConfig",
    "IndexReport",
    "property_suite",
    "run_experiment",
    "FlowReport",
    "OperatorPath",
    "essential_codimension",
    "index_via_mass_flip",
    "spectral_flow",
    "straight_line_flow",
    "winding_cocycle",
    "CalliasSetup",
    "Inertia",
    "Window",
    "callias_operator",
    "compress_to_window",
    "even_callias_operator",
    "inertia",
    "kappa0",
    "kernel_count_index",
    "phase_space_window",
    "signature_index_odd",
    "spectral_localizer",
    "GeneralOperator",
    "HermitianOperator",
    "LatticeModel",
    "PositionDerivation",
    "TraceWeights",
    "build_lattice",
    "dirac_operator",
    "magnetic_shifts",
    "weighted_trace",
    "ChiralProjectionData",
    "boundary_invariant",
    "chern_number",
    "chiral_projection",
    "even_pairing",
    "nc_winding",
    "odd_index_pairing",
    "skew_corner_index",
]
