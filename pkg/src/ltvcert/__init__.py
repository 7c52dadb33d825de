"""Numerical analysis of linear time-varying systems.

Transition matrices, Gramians, adjoint/dual constructions, envelope
certificates (bounded growth, uniform and nonuniform controllability and
observability, nonuniform exponential stability) and observer synthesis
through a differential Riccati equation.
"""

__version__ = "0.1.0"

from .system import ConfigError, DomainError, LtvSystem, MatrixFunction, TimeDomain, load_system
from .propagator import transition, transition_norm, transitions, transition_grid
from .gramian import (GramianResult, controllability_gramian, gramian, gramian_table,
                      gramian_windows, k_matrix, n_matrix, observability_gramian)
from .duality import (adjoint_system, dual_system, plant_adjoint, plant_dual,
                      verify_gramian_identities, verify_gramian_identities_grid)
from .envelope import (CERTIFIED, INCONCLUSIVE, REFUTED, CertificateVerdict, GramianEnvelope,
                       GrowthEnvelope, NuesEnvelope, certify_gramian_envelope, certify_kalman,
                       certify_nues, check_stability_equivalence, fit_growth_envelope,
                       verify_triad)
from .riccati import (ObserverGain, simulate_observer, solve_riccati, synthesize_observer,
                      verify_closed_loop_bound, verify_proposition_17)
from .scenarios import get_scenario, list_scenarios, random_system, run_scenario

__all__ = [
    "ConfigError", "DomainError", "LtvSystem", "MatrixFunction", "TimeDomain", "load_system",
    "transition", "transition_norm", "transitions", "transition_grid",
    "GramianResult", "controllability_gramian", "gramian", "gramian_table", "gramian_windows",
    "k_matrix", "n_matrix", "observability_gramian",
    "adjoint_system", "dual_system", "plant_adjoint", "plant_dual",
    "verify_gramian_identities", "verify_gramian_identities_grid",
    "CERTIFIED", "INCONCLUSIVE", "REFUTED", "CertificateVerdict", "GramianEnvelope",
    "GrowthEnvelope", "NuesEnvelope", "certify_gramian_envelope", "certify_kalman",
    "certify_nues", "check_stability_equivalence", "fit_growth_envelope", "verify_triad",
    "ObserverGain", "simulate_observer", "solve_riccati", "synthesize_observer",
    "verify_closed_loop_bound", "verify_proposition_17",
    "get_scenario", "list_scenarios", "random_system", "run_scenario",
]
