"""Light ray transforms on Lorentzian product spacetimes.

Forward and adjoint transforms along null geodesics, three realizations of
the normal operator, a cone-restricted parametrix, and probes that measure
wavefront decay, symbol transport and mapping orders.
"""

from .errors import *  # noqa: F401,F403
from .fields import GridField
from .spacetime_geometry import (Bicharacteristic, CausalClass, ConjugateRecord, PhasePoint,
                                 SpacetimeMetric, classify_covector, conjugate_scan, exp_light,
                                 flat_static, gh_bump, hamiltonian, integrate_bicharacteristic,
                                 inverse_exp, kernel_jacobian, lorentz_norm, metric_from_name,
                                 minkowski, null_covector, r_function, sphere_slice, static_bump)
from .ray_transform import (RayData, RayFamily, adjoint, build_ray_family, family_for_grid,
                            forward, normal_compose, sphere_rule)
from .normal_operator import (CrossValidationReport, MultiplierSymbol, a_profile,
                              apply_multiplier, cross_validate, kernel_apply_static,
                              multiplier_k, normal_constant)
from .parametrix import ParametrixConfig, apply_H, apply_Q, recover
from .microlocal_probe import (ConormalSpec, DecayReport, SobolevFit, band_limited_field,
                               centered_grid, invisible_leading, sign_definite_check,
                               sobolev_gain_fit, synthesize, transport_alpha, wave_packet,
                               wf_decay_probe)
from .cli_io import (RunConfig, export_csv, load_config, parse_config, read_grid, run_command,
                     write_grid)

__version__ = "0.1.0"
