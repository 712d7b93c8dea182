"""ScaledGD(lambda): damped preconditioned gradient descent for
overparameterized low-rank matrix sensing, with GD / ScaledGD / PrecGD
baselines, Gaussian and identity sensing operators, phase diagnostics,
and a reproducible experiment harness."""

__version__ = "0.1.0"

from .problem import (ApproxTruth, GroundTruth, NoiseModel, dense_m_star,
                      make_approx_truth, make_ground_truth)
from .sensing import (Measurements, MemoryCapError, RipEstimate, SensingOperator,
                      apply_adjoint, apply_forward, apply_normal,
                      estimate_rip_constant, gaussian_operator,
                      identity_operator, measure)
from .solver import (ALGORITHMS, DampingEstimate, DivergenceError, IterateState,
                     PreconditionerError, SolverConfig, StoppingRule, Trajectory,
                     estimate_damping, gradient, loss, random_init, run,
                     spectral_init, step_gd, step_prec_gd, step_scaled_gd,
                     step_scaled_gd_lambda)
from .diagnostics import (DeltaNorm, IterateDecomposition, PhaseMetrics,
                          decompose_iterate, delta_norm, orthonormal_complement,
                          phase_metrics, reconstruction_error)
from .experiments import (ExperimentRecord, PRESETS, SweepSpec, emit_csv,
                          fit_loglog_slope, minimax_reference, preset_spec,
                          run_sweep, sweep_condition_number, sweep_init_scale,
                          sweep_noise, sweep_overparam_rank)
