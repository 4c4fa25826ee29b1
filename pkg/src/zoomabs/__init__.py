"""Dynamic zoom-quantizer abstractions for sampled nonlinear control systems."""

from .abstraction import (AbstractSystem, AbstractionBuilder, ComplexityReport,
                          PrecisionBudget, build_abstraction, complexity_report,
                          parse_abstraction, precision_ok,
                          precision_ok_geometric)
from .bisim import (FiniteTS, HarnessReport, Relation, Verdict,
                    check_bisimulation, check_simulation, from_abstract_system,
                    theorem1_harness)
from .boxes import Box, prism
from .dynamics import (ControlSystem, LyapunovCertificate, SampledSystem,
                       StabilityBound, beta_from_lyapunov, check_lipschitz,
                       check_lyapunov, exponential_bound, get_model, integrate,
                       integrate_batch, register_model,
                       scalar_linear_certificate)
from .errors import (DegenerateRegion, EmptyContraction, EmptyMenu,
                     InputMismatch, InputOutOfRange, NoPath, NonFinite,
                     PrecisionBreach, RangeExceeded, RelationBreach,
                     ScenarioError, UnsupportedRho, ZoomabsError)
from .inputabs import (InputLattice, InputMenu, ReachCloud, build_menu,
                       input_grid, input_lattice, reach_cloud,
                       verify_input_cover)
from .planner import (PatrolPlan, PatrolRun, PlannerSettings, Scenario,
                      Trajectory, initial_region_for, patrol_loop, plan, refine)
from .quantization import (LatticePoint, ZoomQuantizer, cover_check,
                           lattice_count, lattice_points, zoom_quantize,
                           zoom_quantize_scalar)
from .regions import (Classification, EventState, Region, RegionPolicy,
                      classify, contraction, next_region, snap_center,
                      update_events)

__version__ = "0.1.0"
