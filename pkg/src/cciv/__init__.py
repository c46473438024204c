"""Combined inference for linear IV regression with clustered data.

The package runs a cluster-robust Wald test on low-dimensional instruments, a
leave-one-cluster-out jackknife LM test and AR statistic on many instruments,
and the optimal linear combination of the three, together with a Monte Carlo
engine for size tables and power curves.
"""

__version__ = "0.1.0"

from .combine import (
    CombinationWeights,
    InferenceConfig,
    InferenceReport,
    alpha_hats,
    combine_weight,
    combined_test,
    rho_hats,
    run_inference,
    run_inference_grid,
)
from .data import (
    ClusteredIVData,
    ClusterPartition,
    ColumnSchema,
    TransformedDesign,
    ValidationReport,
    load_csv,
    partial_out,
    validate,
    write_csv,
)
from .exceptions import (
    CcivError,
    IllConditioned,
    InvalidInput,
    NumericalFailure,
    ParseError,
    RankDeficient,
    SchemaError,
    ValidationFailed,
    VarianceError,
    WeakDesignError,
)
from .jackknife import (
    JackknifeComponents,
    ar_stat,
    jackknife_components,
    jive_beta2,
    lm_stat,
    offdiag_bilinear,
    variance_phi2,
    variance_phi3,
)
from .linalg import chi2_quantile, inv_sqrt_psd, projection, sym_eig
from .oracle import (
    ComparisonTable,
    LimitExperimentSpec,
    limit_experiment_table,
    mc_limit_experiment,
)
from .simulate import (
    DGPConfig,
    PowerTable,
    SimulationTruth,
    gen_cluster_sizes,
    gen_dataset,
    get_preset,
    power_curve,
)
from .wald import WaldComponents, cluster_meat, gmm_beta1, wald_components, wald_stat

__all__ = [
    "__version__",
    "CcivError",
    "IllConditioned",
    "InvalidInput",
    "NumericalFailure",
    "ParseError",
    "RankDeficient",
    "SchemaError",
    "ValidationFailed",
    "VarianceError",
    "WeakDesignError",
    "ClusterPartition",
    "ClusteredIVData",
    "ColumnSchema",
    "TransformedDesign",
    "ValidationReport",
    "load_csv",
    "write_csv",
    "validate",
    "partial_out",
    "sym_eig",
    "inv_sqrt_psd",
    "projection",
    "chi2_quantile",
    "WaldComponents",
    "gmm_beta1",
    "cluster_meat",
    "wald_components",
    "wald_stat",
    "JackknifeComponents",
    "offdiag_bilinear",
    "jive_beta2",
    "variance_phi2",
    "variance_phi3",
    "lm_stat",
    "ar_stat",
    "jackknife_components",
    "CombinationWeights",
    "InferenceConfig",
    "InferenceReport",
    "combine_weight",
    "alpha_hats",
    "rho_hats",
    "combined_test",
    "run_inference",
    "run_inference_grid",
    "DGPConfig",
    "PowerTable",
    "SimulationTruth",
    "gen_cluster_sizes",
    "gen_dataset",
    "get_preset",
    "power_curve",
    "LimitExperimentSpec",
    "ComparisonTable",
    "mc_limit_experiment",
    "limit_experiment_table",
]
