"""Single-level and two-level analyses of grouped data: descriptives, OLS,
ANOVA, MANOVA, ML covariance-structure models and variance components."""
from .distributions import chi2_upper_tail, f_upper_tail, normal_two_sided, t_two_sided
from .manova import SscpPartition, WilksResult, determinant, sscp_partition, wilks_test
from .moments import (
    DataError,
    DataTable,
    GroupMoments,
    PooledMoments,
    correlation_matrix,
    group_moments,
    ingest_csv,
    load_summary_json,
    moments_from_summary,
    pool,
)
from .multilevel import (
    SimulationConfig,
    TwoLevelModel,
    TwoLevelMoments,
    TwoLevelPattern,
    VarianceComponents,
    decompose_two_level,
    fit_random_intercept,
    fit_two_level_sem,
    generate_clustered,
    implied_two_level,
    simulate,
)
from .sem import FitReport, ParamVector, PathModel, fit_ml, fml, implied_covariance, standardize
from .univariate import AnovaResult, RegressionResult, anova_oneway, ols_two_group

__version__ = "0.1.0"
