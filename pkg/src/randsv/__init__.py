"""Singular-value scaling experiments and exact dual-system checks for i.i.d. random matrices."""

from .biortho import (
    BiorthoSystem,
    IdentityReport,
    ReducedSystem,
    column_locality_check,
    dual_norm_identity,
    dual_system,
    identity_suite,
    reduced_system,
    verify_reduced_identities,
)
from .ensembles import (
    EnsembleSpec,
    EntryDistribution,
    SeedPath,
    levy_concentration,
    make_spec,
    psi2_estimate,
    sample_matrix,
    validate_assumption,
)
from .experiments import (
    ExperimentConfig,
    ScalingReport,
    TailEstimate,
    TailReport,
    concentration_probe,
    distance_experiment,
    minsv_lowerbound_experiment,
    rectangular_augmentation,
    sandwich_experiment,
    scaling_experiment,
    tail_experiment,
)
from .linalg import (
    MatrixNorms,
    Projector,
    Subspace,
    SvdResult,
    dist_to_subspace,
    matrix_norms,
    orthonormal_basis,
    projector,
    restricted_min_sv,
    singular_values,
    solve,
    svd,
)
from .nets import EpsNet, build_net, covering_check

__version__ = "0.1.0"
