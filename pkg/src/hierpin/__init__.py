"""Hierarchical pinning with quenched disorder on the diamond lattice.

The partition-function ratio R evolves by R' = (R1 R2 + B - 1)/B with
i.i.d. copies R1, R2; branching factor B > 2. The package computes the
quenched free energy with rigorous finite-level sandwich bounds, exact
finite-support oracles, phase certificates (fractional-moment route to
delocalization, sandwich route to localization), certified brackets of
the critical point, disorder-relevance diagnostics, and a tilted-measure
experiment for the delocalized tail.
"""

from .exact import AtomBudgetError, ContactWeights, ExactDist, LevelBound, exact_track
from .mc import FracMomentEstimate, FreeEnergyEstimate, LogPool, run_free_energy
from .model import (
    B_CRIT,
    AnnealedState,
    Disorder,
    ModelParams,
    alpha,
    annealed_free_energy,
    annealed_hc,
    delta_of_beta,
    dualize,
    finite,
    gaussian,
    irrelevance_threshold,
    kB,
    parse_disorder,
    rademacher,
    shift_exponent,
)
from .phase import (
    Certificate,
    CriticalBracket,
    ScalingStudy,
    TiltReport,
    TiltSpec,
    UnresolvedBracketError,
    bracket_hc,
    certify,
    irrelevance_check,
    marginal_probe,
    scaling_study,
    tilt_experiment,
    tilted_mean_r0,
)

__version__ = "0.1.0"

__all__ = [
    "AnnealedState",
    "AtomBudgetError",
    "B_CRIT",
    "Certificate",
    "ContactWeights",
    "CriticalBracket",
    "Disorder",
    "ExactDist",
    "FracMomentEstimate",
    "FreeEnergyEstimate",
    "LevelBound",
    "LogPool",
    "ModelParams",
    "ScalingStudy",
    "TiltReport",
    "TiltSpec",
    "UnresolvedBracketError",
    "alpha",
    "annealed_free_energy",
    "annealed_hc",
    "bracket_hc",
    "certify",
    "delta_of_beta",
    "dualize",
    "exact_track",
    "finite",
    "gaussian",
    "irrelevance_check",
    "irrelevance_threshold",
    "kB",
    "marginal_probe",
    "parse_disorder",
    "rademacher",
    "run_free_energy",
    "scaling_study",
    "shift_exponent",
    "tilt_experiment",
    "tilted_mean_r0",
    "__version__",
]
