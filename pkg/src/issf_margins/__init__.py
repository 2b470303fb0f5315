"""Safety filters for control-affine systems, their gain margins and certificates."""
from .comparison import (ComparisonFunction, FunctionClass, LegendreFenchel, lf_scaled, lf_transform,
                         make_cosh, make_linear_ek, make_linear_k, make_power, make_quadratic,
                         make_quartic_sum, young_gap)
from .plant import (BarrierCandidate, BoundaryClassification, Box, ControlAffinePlant, Verdict,
                    classify_boundary, guaranteed_margin, lie_derivatives, sample_boundary)
from .filters import (FilterKind, FilterOutput, FilterSpec, cbf_qp, evaluate, improved_filter,
                      improved_r_inv, inverse_optimal, sontag)
from .certify import (CertReport, Condition, CostAccount, hji_check, hji_residual, issf_bf_check,
                      penalty_function, penalty_sign_check, realized_cost, realized_costs, zbf_check)
from .sim import (DisturbanceSignal, SimConfig, SweepReport, Trajectory, ViolationMetrics, gain_sweep,
                  integrate, issf_envelope, violation_metrics)
from .scenarios import REGISTRY, Scenario, get_scenario, list_scenarios

__version__ = "0.1.0"
