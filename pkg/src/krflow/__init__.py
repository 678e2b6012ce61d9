"""Numerical laboratory for the normalized conformal Ricci flow on the
two-sphere: axisymmetric metrics, their Ricci potentials, weighted
Laplacian spectra, flow trajectories, and the monitor suite that checks
the quantitative estimates along them."""

__version__ = "0.1.0"

from .geometry import (ConformalMetric, Grid, ScalarField, conformal_metric,
                       curvature_bounds, diameter, gaussian_curvature,
                       grad_norm_sq, make_grid, noncollapsing_kappa,
                       normalize_volume, round_metric, volume,
                       weighted_integral)
from .potential import (FunctionalBundle, RicciPotential, average_a,
                        complex_hessian_norms, delta_prime, functional_Y,
                        functional_Z, functional_bundle, futaki_integrals,
                        solve_ricci_potential, DomainError, VolumeMismatch)
from .spectral import (BandAmbiguity, EigenData, ModeProblem, SolveFail,
                       Spectrum, eigen_data, lambda_second, plain_lambda1,
                       sobolev_constant_estimate, weighted_spectrum)
from .flow import (FlowConfig, FlowState, StepReject, Trajectory,
                   check_kahler_class, log_det_bookkeeping, run, step)
from .monitors import (CheckReport, TrajectoryReport, evaluate_trajectory,
                       convergence_order)
from .harness import (ConfigError, ExperimentSpec, RunArtifacts, dumps,
                      load_spec, loads, run_scenario, sweep_epsilon)
