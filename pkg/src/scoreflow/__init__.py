"""Heat-flow scores, reverse-time generation and their diagnostics."""

from .measures import (EmpiricalMeasure, SupportGeometry, fig1_measure, lemniscate_dataset,
                       load_measure, make_empirical, support_geometry, two_dirac_measure)
from .heatflow import log_density, log_density_jet, posterior
from .score import (ScoreField, custom_field, empirical_divergence, empirical_field,
                    empirical_score, li_yau_margin, make_candidate, mean_shift)
from .reverse import (Ensemble, TimeSchedule, Trajectory, integrate_ode, integrate_sde,
                      make_schedule, run_ensemble)

__all__ = [
    "EmpiricalMeasure", "SupportGeometry", "fig1_measure", "lemniscate_dataset", "load_measure",
    "make_empirical", "support_geometry", "two_dirac_measure", "log_density", "log_density_jet",
    "posterior", "ScoreField", "custom_field", "empirical_divergence", "empirical_field",
    "empirical_score", "li_yau_margin", "make_candidate", "mean_shift", "Ensemble",
    "TimeSchedule", "Trajectory", "integrate_ode", "integrate_sde", "make_schedule",
    "run_ensemble",
]

__version__ = "0.1.0"
