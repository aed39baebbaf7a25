"""Multi-marginal optimal transport toolkit for molecular dissociation
energies in the strictly correlated electron limit."""

from .measures import (
    DiscreteMeasure,
    CouplingTensor,
    star,
    translate,
    separated_mixture,
    product,
    symmetrize,
    marginal,
    moment,
    random_coupling,
    grid_measure,
)
from .costs import (
    CostSpec,
    EtaDomainError,
    SizeCapError,
    coulomb_energy,
    coulomb_separated,
    bilinear_cost,
    harmonic_cost,
    interaction_leading,
    interaction_exact,
    interaction_taylor,
    interaction_residual,
    harmonic_average,
    quad_bilinear_constant,
    check_eta_admissible,
    cost_tensor,
)
from .exact import (
    DualPotentials,
    SolveReport,
    SplittingCheck,
    MongeDiagnostics,
    UniquenessReport,
    solve_lp,
    verify_splitting,
    monge_diagnostics,
    uniqueness_probe,
    product_bilinear_value,
)
from .entropic import (
    EntropicState,
    SinkhornResult,
    solve_sinkhorn,
    epsilon_schedule_solve,
    entropic_coupling,
)
from .dissociation import (
    CurveRow,
    DissociationReport,
    SlopeCheck,
    DegeneracyReport,
    SceInfeasibleError,
    sce_functional,
    clear_sce_cache,
    dissociation_curve,
    taylor_slope_check,
    dirac_degeneracy_demo,
)

__version__ = "0.1.0"
