"""rieszselect: treatment-effect estimation under sample selection.

Estimates average treatment effects when outcomes are observed only for a
selected subsample, using a local-moment random forest that learns the
inverse-probability weighting function directly, plus a full
omitted-variable-bias sensitivity and benchmarking toolkit.
"""

from .data import ColumnSchema, Dataset, FoldPlan, load_csv, load_groups, make_folds, write_csv
from .dgp import (
    ConfoundedDgpConfig,
    MarDgpConfig,
    OracleTables,
    enumerate_tables,
    example_confounded_config,
    gen_confounded,
    gen_mar,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    DimensionError,
    DomainError,
    GroupError,
    McError,
    NumericalError,
    ParseError,
    RieszSelectError,
    SchemaError,
    SeparationError,
    SingularNodeError,
    StratificationError,
    TrainError,
)
from .estimators import (
    AteEstimate,
    IrmLearners,
    LogisticModel,
    NuisanceFit,
    PropensityModel,
    RfParams,
    SsmLearners,
    dr_estimate,
    estimate_fr,
    estimate_fr_with_nuisances,
    estimate_irm,
    estimate_irm_with_nuisances,
    estimate_ssm,
    estimate_ssm_with_nuisances,
    fit_logistic,
    fit_propensity_pair,
    plugin_alpha_short,
    representer_check,
)
from .features import ArmInterceptMap, ArmLinearMap, FeatureMap, make_map
from .forest import ForestConfig, MomentForest, NodeSolution, fit, fit_full, solve_node, split_score
from .benchmark import BenchmarkConfig, BenchmarkResult, benchmark_group, benchmark_groups
from .mc import McConfig, McSummary, run_mc, summarize
from .sensitivity import (
    CalibrationCurve,
    ContourGrid,
    SensitivityGridPoint,
    SensitivityInputs,
    adjusted_interval,
    bias_bound,
    calibrate_quasi_gaussian,
    contour_grid,
    grid_point,
    pi0_draw_means,
    robustness_value,
    scale_factor,
    sensitivity_report,
)

__version__ = "0.1.0"
