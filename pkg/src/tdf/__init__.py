"""Geometry of fixed-rank Tucker tensors and Dirac-Frenkel reduced dynamics.

Submodules:

``tensor``      dense tensors, matricization, weighted l^p norms, tensor I/O
``tucker``      Tucker format, mode ranks, minimal subspaces, HOSVD
``geometry``    charts, retraction, tangent vectors and tangent bases
``projection``  Hilbert, metric and generalized tangent projections; injective norm
``dynamics``    Kronecker-sum flows, Hartree and Tucker reduced integrators
``cli``         the ``tdf`` command-line tool
"""

from .errors import (
    CommonComplementViolation,
    MaxIterationsExceeded,
    NotInTangentSpace,
    NotMinimalError,
    RankDegeneracy,
    SingularCore,
    TDFError,
    TensorFormatError,
)
from .tensor import (
    AmbientNorm,
    ModeNorm,
    ambient_norm,
    dematricize,
    elementary_tensor,
    inner,
    matricize,
    mode_contract,
    read_tensor,
    write_tensor,
)
from .tucker import (
    MinimalSubspace,
    TuckerTensor,
    alpha_rank,
    hosvd,
    is_admissible,
    is_minimal,
    minimal_subspace,
    to_tucker,
    tucker_to_dense,
)
from .geometry import (
    BasePoint,
    ChartPoint,
    TangentVector,
    embed_tangent,
    extract_tangent,
    invert_chart,
    make_base,
    retract,
    tangent_basis,
    tangent_norm,
    transition,
)
from .projection import (
    DualVector,
    ProjectionReport,
    duality_map,
    injective_norm,
    project_generalized_lp,
    project_hilbert,
    project_metric_lp,
)
from .dynamics import (
    HartreeState,
    KroneckerSumOperator,
    TrajectoryRecord,
    apply_operator,
    hartree_rhs,
    integrate_hartree,
    integrate_tucker_dlra,
    mean_field,
    reference_solve,
)

__version__ = "0.1.0"
