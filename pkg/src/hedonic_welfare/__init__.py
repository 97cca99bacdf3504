"""Money-metric welfare effects of changes to nonlinear hedonic budget frontiers.

The package estimates log-linear frontier schedules and quantile demand
models from household microdata, and turns a frontier movement into
compensating variation by a path-independent closed form, a path-ODE
integrator, and an independent simulation oracle used for validation.
"""

__version__ = "0.1.0"

from .errors import (
    BracketFailure,
    ChecksumError,
    ConfigError,
    ConvergenceFailure,
    DegenerateCoefficient,
    DegenerateDesign,
    DomainError,
    GridExhausted,
    HedonicWelfareError,
    InfeasibleBudget,
    MissingArtifact,
    NoInteriorOptimum,
    ParseError,
    RankDeficient,
    ReplicationFailure,
    SchemaError,
    SingularInput,
    StepFailure,
    ToleranceNotMet,
)
from .hedonic import (
    AdditiveTwoPartSchedule,
    GeneralSchedule,
    LogLinearSchedule,
    Market,
    PolicyChange,
    QuantileDemandModel,
    ThetaPath,
    demand_quantile_eval,
    price_cross_derivative,
    price_eval,
    price_theta_gradient,
    slutsky_residual,
)
from .oracle import (
    AssumptionReport,
    Consumer,
    ConsumerOptimum,
    GeneralUtility,
    LogLogUtility,
    MultiAttributeUtility,
    check_assumptions,
    indirect_utility,
    oracle_cv,
    solve_consumer,
)
from .population import DirectDemandSpec, MarketParams, Population, SimConfig, generate_population
from .estimation import (
    HedonicFit,
    PcaModel,
    QuantileFit,
    fit_ivqr_grid,
    fit_market_hedonic,
    fit_quantile_demand,
    pca_first_component,
    test_symmetry_restriction,
)
from .welfare import (
    CvResult,
    CvSolverSettings,
    CvTable,
    calibrate_to_benchmark,
    cv_closed_form,
    cv_path_ode,
    cv_table,
    model_demand_fn,
    path_independence_gap,
)
from .constants import BenchmarkConstants, load_constants
