"""Differentially private releases that satisfy mandated invariants exactly.

The public API mirrors the pipeline: noise mechanisms, invariant systems,
the conditional (congenial) sampler, optimisation-based post-processing,
closed-form two-bin densities and a brute-force privacy auditor.
"""

__version__ = "0.1.0"

from .mechanisms import (
    DoubleGeometricMechanism,
    LaplaceMechanism,
    NoiseMechanism,
    dg_cdf,
    dg_pmf,
    dg_quantile,
    laplace_cdf,
    laplace_density,
    laplace_quantile,
    privatize,
)
from .invariants import (
    Completion,
    InvariantSetDescriptor,
    LinearInvariantSystem,
    auto_select_index_set,
    complete,
    contingency_index_set,
    contingency_invariants,
    dump_system,
    load_system,
    read_table_csv,
    satisfies,
)
from .sampler import (
    ChainOutput,
    CongenialMechanism,
    ProposalSpec,
    RejectionSamplingError,
    acceptance_sweep,
    mis_chain,
    mis_sample,
    rejection_sample,
)
from .postprocess import (
    InvariantProjector,
    ProjectionConfig,
    ProjectionError,
    l1_convex_project,
    l2_project_equality,
    nnl2_project,
)
from .analytic import (
    CombinationDensityParams,
    attained_budget_l1,
    combo_density,
    conditional_laplace_density,
    verify_shift_ratio_bound,
)
from .audit import (
    VACUOUS,
    AuditReport,
    DatabaseSpace,
    LatticeMechanism,
    NeighborRelation,
    classify_neighborhood,
    empirical_epsilon,
    empirical_epsilon_mc,
    gamma_star,
    posterior_audit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
