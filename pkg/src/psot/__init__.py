"""Pivot sliced, min-pivot sliced and expected sliced optimal transport for discrete measures."""

from .apps import (DegenerateAlignmentError, ICPResult, PixelCloud, RigidTransform, color_transfer, icp_register,
                   load_image, procrustes, save_image)
from .exact import (LinearProgram, LPResult, NonUniquePlanError, SizeGuardError, ThreePlan, lp_solve, w2_exact,
                    w_nu_disintegration, w_nu_lp)
from .expected import (LiftedPlan, barycentric_projection, expected_barycentric, expected_plan, lifted_barycentric,
                       lifted_plan, ls_theta)
from .flows import FlowConfig, FlowTrace, fixed_plan_loss, run_flow, step_gradient
from .measures import (DimensionError, Direction, DiscreteMeasure, PlanValidationError, SparsePlan, TieGroups,
                       load_cloud, project, sample_sphere, save_cloud, sort_with_groups)
from .ot1d import QuantileCoupling, projected_middle, quantile_coupling, w2_1d
from .pivot import (DegeneratePointsError, PivotResult, in_general_position, min_ps, ps_costs, ps_theta,
                    ps_theta_monge_oracle, verify_full_permutation_coverage)

__version__ = "0.1.0"
