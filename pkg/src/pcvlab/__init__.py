"""
pcvlab: how well do principal components recover the latent variables that
generated the data?

Modules
-------
lvgen     synthetic latent-variable systems
pca       correlation-matrix PCA, Kaiser-Guttman retention, varimax / promax
stats     Pearson tests, dependent-correlation bootstrap, Kruskal-Wallis, MAE
validity  significant-and-selective matching, construct validity, replication
sweep     omnibus grids, factor effects, proxy curves
fit       fitting generator hyperparameters to empirical score matrices
cli       command-line front end
"""

__version__ = "0.1.0"

from .lvgen import (
    ConfigError,
    DegenerateColumnError,
    Distribution,
    GeneratorConfig,
    Importance,
    Link,
    Rotation,
    Scale,
    SyntheticSystem,
    best_case_config,
    generate,
)
from .pca import PcaModel, fit_pca, retain_kaiser_guttman, rotate
from .stats import compare_dependent_abs_correlations, covariance_mae, kruskal_wallis
from .validity import ValidityReport, construct_validity, significant_selective_match
from .sweep import SweepPlan, factor_effects, proxy_curve_replication, proxy_curve_variance, run_sweep
from .fit import FitRecord, SearchSpace, bayesian_search, grid_search, objective, space_preset

__all__ = [
    "ConfigError",
    "DegenerateColumnError",
    "Distribution",
    "GeneratorConfig",
    "Importance",
    "Link",
    "Rotation",
    "Scale",
    "SyntheticSystem",
    "best_case_config",
    "generate",
    "PcaModel",
    "fit_pca",
    "retain_kaiser_guttman",
    "rotate",
    "compare_dependent_abs_correlations",
    "covariance_mae",
    "kruskal_wallis",
    "ValidityReport",
    "construct_validity",
    "significant_selective_match",
    "SweepPlan",
    "factor_effects",
    "proxy_curve_replication",
    "proxy_curve_variance",
    "run_sweep",
    "FitRecord",
    "SearchSpace",
    "bayesian_search",
    "grid_search",
    "objective",
    "space_preset",
]
