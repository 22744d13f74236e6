"""Feasible-region identification of robot task parameters from CBF-QP behaviour."""

from .controller import (
    ConstraintSystem,
    KktSolution,
    SafetyParams,
    TaskModel,
    build_constraints,
    nominal_control,
    solve_qp,
)
from .errors import (
    ConfigError,
    ContradictionError,
    NoDataError,
    ProjectionBlowUpError,
    QPInfeasibleError,
    RegionIdError,
    SingularConstraintError,
    UnboundedRegionError,
)
from .linalg import ThinSvd, pseudoinverse, rank_with_tol, rotate90, thin_svd
from .observer import (
    AffineControlModel,
    CaseClassification,
    Measurement,
    ObserverConfig,
    RegionEstimate,
    classify,
    detect_active_set,
    init_estimate,
    step,
)
from .polytope import (
    ConvexPolygon,
    Halfspace,
    HalfspaceSet,
    area,
    clip,
    contains,
    eliminate_eta,
    intersect_all,
    remove_redundant,
)

__version__ = "0.1.0"
