"""Design-based inference for randomized experiments.

Finite populations of potential outcomes, fixed-margin randomization
designs, the difference-in-means estimator and its variances, an exact
enumeration oracle, and Monte Carlo studies over super-population draws.
"""

__version__ = "0.1.0"

from .design import Design, DesignError, SupportTooLarge, assignment_pmf, enumerate_assignments, sample_assignment
from .estimator import (
    EstimateReport,
    ObservedData,
    estimate,
    neyman_true_variance,
    observe,
    sharp_Stau2_lower_bound,
    superpop_variance,
    variance_by_design,
)
from .oracle import EnumerationReport, enumerate_moments, frt_exact, frt_monte_carlo, verify_residual_identity
from .population import (
    FinitePopulation,
    PopulationSummary,
    SuperPopulationModel,
    draw_population,
    model_moments,
    read_population_csv,
    summarize,
    write_population_csv,
)
from .study import StudyConfig, StudyReport, run_study

__all__ = [
    "Design",
    "DesignError",
    "SupportTooLarge",
    "assignment_pmf",
    "enumerate_assignments",
    "sample_assignment",
    "EstimateReport",
    "ObservedData",
    "estimate",
    "neyman_true_variance",
    "observe",
    "sharp_Stau2_lower_bound",
    "superpop_variance",
    "variance_by_design",
    "EnumerationReport",
    "enumerate_moments",
    "frt_exact",
    "frt_monte_carlo",
    "verify_residual_identity",
    "FinitePopulation",
    "PopulationSummary",
    "SuperPopulationModel",
    "draw_population",
    "model_moments",
    "read_population_csv",
    "summarize",
    "write_population_csv",
    "StudyConfig",
    "StudyReport",
    "run_study",
]
