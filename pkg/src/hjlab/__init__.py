"""hjlab: a numerical laboratory for 1D viscous Hamilton-Jacobi homogenization.

The package computes effective Hamiltonians of

    du/dt = a(x) d2u/dx2 + G(du/dx) + beta * V(x)

in stationary random media via certified one-sided corrector profiles,
and cross-checks the result against a monotone finite-difference solver.
"""

from .corrector import (
    CorrectorProfile,
    GluedProfile,
    ThetaEstimate,
    build_glued_profile,
    burn_in_length,
    corrector_profile,
    estimate_theta,
    find_low_slope_points,
    load_profile,
    residual_series,
    save_profile,
    shoot,
)
from .effective import (
    EffectiveH,
    LambdaInversion,
    build_effective_H,
    effective_reference,
    inverse_modulus,
    invert_theta,
    kappa_tilde,
    save_effective,
)
from .environment import (
    KINDS,
    EnvRealization,
    HillWitness,
    check_singular_hill,
    find_hill,
    generate_env,
    load_env,
    reflect,
    s_at,
    s_between,
    sample,
    sample_many,
    save_env,
    shift,
)
from .errors import (
    BracketExitError,
    CertificateError,
    ConfigError,
    FlatPieceError,
    GlueError,
    HillError,
    ScientificError,
    SignError,
    StabilityError,
    WindowError,
)
from .hamiltonian import (
    AsymPowerG,
    ContractionModulus,
    GrowthCertificate,
    GrowthReport,
    LogQuasiconvexG,
    PowerG,
    TabulatedG,
    bracket,
    branch2_modulus,
    branch_inverse,
    eval_G,
    lipschitz_on,
    make_G,
    monotonicity_modulus,
    validate_growth,
)
from .pde import (
    EvolveResult,
    SchemeConfig,
    SignReport,
    SweepResult,
    cfl_gradient_range,
    cfl_number,
    evolve,
    godunov_flux,
    homogenize_sweep,
    profile_antiderivative,
    residual_probe,
    save_probe,
    save_sweep,
    scheme_update,
    stable_dt,
)

__version__ = "0.1.0"
