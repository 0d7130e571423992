"""Desk-scale laboratory for fully discrete BDF finite element methods on
variable-coefficient parabolic problems: meshes, assembly, time stepping,
resolvent/semigroup probes, and regularity/error experiments.
"""

__version__ = "0.1.0"

from .mesh import (
    Mesh,
    MeshError,
    MeshParseError,
    generate_square_mesh,
    generate_lshape_mesh,
    refine_uniform,
    mesh_size,
    quasi_uniformity_ratio,
    save_mesh,
    load_mesh,
    validate_mesh,
)
from .fem import (
    AssembledPair,
    AssemblyError,
    CoefficientField,
    FEFunction,
    FESpace,
    NodalField,
    apply_Ah,
    assemble,
    check_ellipticity,
    coefficient_field,
    l2_project,
    prolongation,
    ritz_project,
)
from .bdf import (
    BdfScheme,
    TimeGrid,
    Trajectory,
    bdf_coefficients,
    d_tau,
    dot_u,
    run_bdf,
    stability_angle,
)
from .norms import NormSpec, lq_norm, lp_time_norm, neg_norm, w1q_norm, w1q_sum
