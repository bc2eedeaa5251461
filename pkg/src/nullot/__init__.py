"""Numerical toolkit for optimal transport and synthetic null energy conditions
on null hypersurfaces of Lorentzian manifolds."""

from .errors import *  # noqa: F401,F403
from .spacetime import (MetricModel, WeightField, BakryEmeryQuery, make_metric, minkowski,
                        schwarzschild_lemaitre, product_surface_m2, warped, perturbed,
                        christoffel, riemann, ricci, bakry_emery_ricci)
from .nullgeo import (adapted_frames, build_adapted_frame, integrate_null_geodesic,
                      propagate_jacobi, taylor_ricci_probe)
from .hypersurface import (NullHypersurfacePatch, CrossSectionGrid, build_patch, build_cone_patch,
                           flow, integrate_measure, rescale_transverse, graph_section_transfer,
                           cross_section_independence_check)
from .transport import (FiberReference, DensityProfile, FiberedMeasure, MonotonePlan,
                        MonotoneRearrangement, monotone_rearrangement, check_null_connected,
                        transport_plan, interpolate, entropy, entropy_power, fiber_uniform)
from .nec import (CheckConfig, CheckReport, nc1_check, nce_check, riccati_diagnostic,
                  rescaling_invariance_check)
from .apps import (ConeScenario, HorizonScenario, lightcone_comparison, hawking_area,
                   rigidity_diagnostic, stability_experiment)
from .config import ScenarioConfig, parse_config

__version__ = "0.1.0"
