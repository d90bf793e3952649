"""reeb-lab: contact Hamiltonian calculus on model manifolds.

Builds contact forms on a Darboux box, the flat 3-torus, and odd spheres;
solves for Reeb and contact Hamiltonian fields; integrates their flows;
computes conformal exponents and discriminants; assembles the Reeb
derivative operator on function bases and estimates the dimensions of the
associated two-term foliation cohomology.
"""

from .errors import (
    BasisRankError,
    ConfigError,
    DegenerateFormError,
    DomainError,
    ExpressionError,
    NotAContactomorphismError,
    NotCoorientationPreservingError,
    ReebLabError,
)
from .fields import OneFormField, ScalarField, parse_oneform_field, parse_scalar_field
from .geometry import (
    BilinearValue,
    CovectorValue,
    ManifoldModel,
    Point,
    TangentVector,
    displace,
    parse_manifold,
    sample_points,
    tangent_frame,
)
from .contact import (
    ContactFormSpec,
    FormValue,
    decompose_oneform,
    decompose_vector,
    eval_form,
    hamiltonian_field,
    parse_form,
    reeb_derivative,
    reeb_field,
)
from .flows import (
    FieldTag,
    IntegratorConfig,
    Trajectory,
    flow_map,
    flow_map_batch,
    integrate_flow,
    linearized_transport,
    memoize_map,
    point_map_batch,
    time_one_map,
)
from .conformal import (
    DiscriminantSample,
    ExponentRecord,
    cocycle_residual,
    conformal_exponent,
    conformal_exponent_direct,
    discriminant_scan,
)
from .variations import (
    PerturbationDirection,
    exponent_variation,
    finite_difference_oracle,
    hamiltonian_field_variation,
    reeb_variation,
    score_reeb_variation_variants,
)
from .operator import (
    OperatorMatrix,
    QuadratureScheme,
    SphereMonomialBasis,
    TorusModeBasis,
    assemble_operator,
    integral_identity_residual,
    integrate,
    kernel_dimensions,
    liouville_quadrature,
    make_basis,
    solve_characteristic,
    validate_kernel_pointwise,
)

__version__ = "0.1.0"
