"""Finsler metrics, their Zermelo deformation by Killing fields, and numerical checks.

Submodules:

* :mod:`zermelo.jets` truncated multivariate Taylor arithmetic;
* :mod:`zermelo.metrics` metrics, winds, the implicit deformed norm and its derivatives;
* :mod:`zermelo.geodesics` sprays, geodesics, Jacobi fields, curvature;
* :mod:`zermelo.flows` wind flows, pushforwards, Killing and Noether checks;
* :mod:`zermelo.scenarios` / :mod:`zermelo.verify` / :mod:`zermelo.cli` the harness.
"""

from .flows import FlowMap, flow, killing_residual, noether_integral, pushforward
from .geodesics import (ChartExitError, DegenerateFlagError, GeodesicTrajectory,
                        JacobiTrajectory, SprayJet, covariant_derivative_along,
                        flag_curvature, integrate_geodesic, integrate_jacobi,
                        local_symmetry_residual, riemann_operator, shooting_jacobi,
                        second_variation_residual, spray)
from .jets import BACKEND, Jet, JetDomainError, eval_jet, fd_oracle
from .metrics import (AdmissibilityError, Metric, PointedVector, WindField, check_admissible,
                      constant_wind, euclidean, finsler_eval, fundamental_tensor,
                      orthogonality_residual, perturbed_sphere, randers_flat_closed_form,
                      rotation_wind, sphere_stereographic, zermelo, zermelo_eval,
                      zermelo_fundamental, zermelo_gradient, zermelo_hessian)

__version__ = "0.1.0"
