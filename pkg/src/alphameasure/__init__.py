"""Grid solvers for envelope fields of compact node sets under constant
coefficient elliptic operators in one or two complex variables, plus the
verification toolkit built around them: inequality checks, refinement
experiments, regularity classification, continuity-modulus fits, and a
scenario-driven command line."""

from .grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    Ball,
    ComplexGrid,
    DistanceField,
    DomainMask,
    ExplicitMask,
    GridError,
    GridFunction,
    NodeSet,
    Rectangle,
    ShapeUnion,
    Shell,
    build_grid,
    classify_domain,
    constant_function,
    distance_field,
    field_from_csv,
    field_from_raw,
    field_to_csv,
    field_to_raw,
    make_node_set,
    mask_from_csv,
    mask_to_csv,
    nodes_in_shape,
    snap_point,
    stencil_offsets,
)
from .operators import (
    AlphaForm,
    DiscreteOperator,
    DiscretePoissonKernel,
    MaxPrincipleReport,
    OperatorError,
    SolverError,
    SubharmonicCheck,
    alpha_form_from_csv,
    apply,
    assemble_operator,
    form_to_effective_coeffs,
    is_alpha_subharmonic,
    max_principle_check,
    poisson_kernel,
    submean_check,
    validate_barrier,
    violations_to_csv,
)
from .envelope import (
    EnvelopeResult,
    Obstacle,
    SolveOptions,
    dense_oracle_solve,
    dirichlet_solve,
    perron_envelope,
    upper_regularize,
)
from .measure import (
    AffineExpr,
    ConstExpr,
    ConvergenceTable,
    HartogsFamily,
    HartogsResult,
    InequalityReport,
    MeasureField,
    PointRegularity,
    RadialPowExpr,
    RealizedScenario,
    RegularityReport,
    ScenarioGeometry,
    SqAxisExpr,
    SqNormExpr,
    TableRow,
    WeightSpec,
    boundary_limit_check,
    check_connection_bounds,
    check_monotonicity,
    check_two_constants,
    decreasing_compacts_experiment,
    exhaustion_experiment,
    expr_from_config,
    hartogs_bump_family,
    hartogs_harness,
    hartogs_trivial_family,
    hartogs_undecided_family,
    increasing_domains_experiment,
    make_weight,
    measure_for,
    polar_union_experiment,
    random_admissible_subsolution,
    realize,
    regularity_report,
    subharmonic_measure,
    weighted_measure,
)
from .holder import (
    HolderFit,
    HolderReport,
    ModulusSample,
    check_near_K_condition,
    fit_holder,
    global_holder_report,
    sample_modulus,
)
from .cli import RunSummary, ScenarioConfig, ScenarioError, export_field, load_scenario, run

__version__ = "0.1.0"
