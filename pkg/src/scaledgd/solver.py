"""Iterative solvers for factorized low-rank matrix sensing.

All four algorithms minimize f(X) = 1/4 ||A(X X^T) - y||^2 over n x r
factors and differ only in the right preconditioner applied to the
gradient:

    gd:                X' = X - eta * G
    scaled_gd:         X' = X - eta * G (X^T X)^{-1}
    scaled_gd_lambda:  X' = X - eta * G (X^T X + lambda I)^{-1}, fixed lambda
    prec_gd:           X' = X - eta * G (X^T X + sqrt(f(X)) I)^{-1}

where G = (A*A(X X^T) - A*(y)) X.  The noiseless case is just the sigma = 0
special case: the update only ever sees A*(y).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import rng
from .problem import GroundTruth, dense_m_star
from .sensing import SensingOperator

ALGORITHMS = ("scaled_gd_lambda", "gd", "scaled_gd", "prec_gd")

_INIT_STREAM = 0
DIVERGENCE_FACTOR = 1e6


class PreconditionerError(np.linalg.LinAlgError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StoppingRule:
    """Stop on oracle relative error, on stalled loss, or both.

    target_rel_err: stop once ||X X^T - M*||_F / ||M*|| <= target (needs an
    oracle).  patience: stop once the loss has not improved by a relative
    improve_tol within `patience` iterations.
    """

    target_rel_err: float | None = None
    patience: int | None = None
    improve_tol: float = 1e-3

    def __post_init__(self):
        if self.target_rel_err is None and self.patience is None:
            raise ValueError("enable at least one stopping criterion")
        if self.target_rel_err is not None and self.target_rel_err <= 0:
            raise ValueError("target_rel_err must be > 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str
    r: int
    eta: float
    lam: float = 0.0
    alpha: float = 1e-9
    init: str = "small_random"        # small_random | spectral | explicit
    x0: np.ndarray | None = None      # used when init == "explicit"
    max_iters: int = 1000
    stop: StoppingRule = field(default_factory=lambda: StoppingRule(patience=100))
    seed_init: int = 0
    record_every: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.algorithm == "scaled_gd" and self.lam != 0.0:
            raise ValueError("scaled_gd is the lambda = 0 case; got lambda != 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.init == "explicit" and self.x0 is None:
            raise ValueError("init='explicit' requires x0")


@dataclass(frozen=True)
class IterateState:
    x: np.ndarray
    t: int
    loss: float
    elapsed_ns: int


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    loss: float
    rel_err_fro: float | None
    rel_err_op: float | None
    metrics: object | None = None   # PhaseMetrics when diagnostics are on
    elapsed_ms: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    records: tuple
    stop_reason: str                 # target_reached | patience | max_iters
    final_state: IterateState


# -- loss / gradient / steps --------------------------------------------------

def loss(op: SensingOperator, y: np.ndarray, x: np.ndarray) -> float:
    resid = op.apply_forward(x @ x.T) - y
    return 0.25 * float(resid @ resid)


def gradient(op: SensingOperator, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (op.apply_normal(x @ x.T) - op.apply_adjoint(y)) @ x


def _solve_preconditioner(x: np.ndarray, grad: np.ndarray, lam: float) -> np.ndarray:
    """grad @ (x^T x + lam I)^{-1} via a Cholesky solve of the r x r system."""
    r = x.shape[1]
    system = x.T @ x + lam * np.eye(r)
    try:
        factor = cho_factor(system, lower=True)
    except np.linalg.LinAlgError as exc:
        raise PreconditionerError("preconditioner singular; use lambda > 0") from exc
    return cho_solve(factor, grad.T).T


def step_gd(x: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    return x - eta * grad


def step_scaled_gd_lambda(x: np.ndarray, grad: np.ndarray, eta: float,
                          lam: float) -> np.ndarray:
    return x - eta * _solve_preconditioner(x, grad, lam)


def step_scaled_gd(x: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    return step_scaled_gd_lambda(x, grad, eta, 0.0)


def step_prec_gd(x: np.ndarray, grad: np.ndarray, eta: float,
                 current_loss: float) -> np.ndarray:
    if current_loss < 0:
        raise ValueError("loss must be >= 0")
    return x - eta * _solve_preconditioner(x, grad, np.sqrt(current_loss))


# -- initialization ------------------------------------------------------------

def random_init(n: int, r: int, alpha: float, seed: int) -> np.ndarray:
    """X0 = alpha * G with G i.i.d. N(0, 1/n)."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    g = rng.normals(seed, _INIT_STREAM, n * r).reshape(n, r) / np.sqrt(n)
    return alpha * g


def spectral_init(op: SensingOperator, y: np.ndarray, r: int) -> np.ndarray:
    """Top-r eigenpairs of A*(y), negative eigenvalues clipped to zero."""
    if r > op.n:
        raise ValueError("r exceeds ambient dimension")
    w = op.apply_adjoint(y)
    vals, vecs = np.linalg.eigh(w)
    order = np.argsort(vals)[::-1][:r]
    top = np.clip(vals[order], 0.0, None)
    return vecs[:, order] * np.sqrt(top)


@dataclass(frozen=True)
class DampingEstimate:
    lambda_hat: float
    rank_guess: int
    spectrum_used: np.ndarray
    c_frac: float


def estimate_damping(op: SensingOperator, y: np.ndarray, rank_guess: int,
                     c_frac: float = 0.25) -> DampingEstimate:
    """Practical damping surrogate: a fraction of the rank_guess-th eigenvalue
    of A*(y), floored at 1e-12 times the top eigenvalue."""
    if not 1 <= rank_guess <= op.n:
        raise ValueError("require 1 <= rank_guess <= n")
    vals = np.linalg.eigvalsh(op.apply_adjoint(y))[::-1]
    floor = 1e-12 * max(vals[0], np.finfo(float).tiny)
    lambda_hat = c_frac * max(vals[rank_guess - 1], floor)
    return DampingEstimate(lambda_hat=float(lambda_hat), rank_guess=rank_guess,
                           spectrum_used=vals[:rank_guess].copy(), c_frac=c_frac)


# -- run loop -------------------------------------------------------------------

def _make_x0(op, y, config):
    if config.init == "small_random":
        return random_init(op.n, config.r, config.alpha, config.seed_init)
    if config.init == "spectral":
        return spectral_init(op, y, config.r)
    if config.init == "explicit":
        return np.array(config.x0, dtype=float)
    raise ValueError(f"unknown init {config.init!r}")


def run(op: SensingOperator, y: np.ndarray, config: SolverConfig,
        oracle=None, collect_diagnostics: bool = False,
        checkpoint_hook=None) -> Trajectory:
    """Iterate the configured algorithm and return the trajectory.

    When an oracle (GroundTruth or ApproxTruth) is supplied, per-iteration
    relative errors against M* are recorded and the target stopping rule is
    active.  Diagnostics (phase metrics) are computed only at record points
    and only on request; they need a GroundTruth oracle.  checkpoint_hook,
    when given, is called as hook(t, x) at every record point.
    """
    from .diagnostics import phase_metrics, decompose_iterate, reconstruction_error
    from .linalg import spectral_norm

    stop = config.stop
    if stop.target_rel_err is not None and oracle is None:
        raise ValueError("target_rel_err stopping needs an oracle")
    if collect_diagnostics and not isinstance(oracle, GroundTruth):
        raise ValueError("diagnostics need a GroundTruth oracle")

    x = _make_x0(op, y, config)
    if x.shape != (op.n, config.r):
        raise ValueError(f"x0 shape {x.shape} does not match (n, r)")
    ay = op.apply_adjoint(y)

    m_star = dense_m_star(oracle) if oracle is not None else None
    if oracle is not None:
        if isinstance(oracle, GroundTruth):
            norm_m = oracle.spectral_norm_m()
        else:
            # base and tail live on orthogonal subspaces, so ||M*|| is the max
            norm_m = max(oracle.base.spectral_norm_m(), oracle.tail_spectral_norm())

    records = []
    start = time.perf_counter_ns()
    loss0 = None
    best_loss = np.inf
    best_t = 0
    stop_reason = "max_iters"
    cur_loss = np.nan

    for t in range(config.max_iters + 1):
        mt = x @ x.T
        z = op.apply_forward(mt)
        resid = z - y
        cur_loss = 0.25 * float(resid @ resid)
        if loss0 is None:
            loss0 = cur_loss
        if not np.isfinite(cur_loss) or (loss0 > 0 and cur_loss > DIVERGENCE_FACTOR * loss0):
            raise DivergenceError(
                f"loss {cur_loss:.3e} exceeded {DIVERGENCE_FACTOR:.0e} x initial "
                f"loss {loss0:.3e} at iteration {t}")

        rel_fro = rel_op = None
        if oracle is not None:
            rdiff = mt - m_star
            rel_fro = float(np.linalg.norm(rdiff)) / norm_m

        at_record = (t % config.record_every == 0) or t == config.max_iters
        if at_record:
            if checkpoint_hook is not None:
                checkpoint_hook(t, x.copy())
            metrics = None
            if oracle is not None:
                rel_op = spectral_norm(mt - m_star)[0] / norm_m
            if collect_diagnostics:
                metrics = phase_metrics(decompose_iterate(x, oracle), oracle, config.lam)
            records.append(TrajectoryRecord(
                t=t, loss=cur_loss, rel_err_fro=rel_fro, rel_err_op=rel_op,
                metrics=metrics,
                elapsed_ms=(time.perf_counter_ns() - start) / 1e6))

        if stop.target_rel_err is not None and rel_fro is not None \
                and rel_fro <= stop.target_rel_err:
            stop_reason = "target_reached"
            break
        if stop.patience is not None:
            if cur_loss < best_loss * (1.0 - stop.improve_tol):
                best_loss = cur_loss
                best_t = t
            elif t - best_t >= stop.patience:
                stop_reason = "patience"
                break
        if t == config.max_iters:
            stop_reason = "max_iters"
            break

        grad = (op.apply_adjoint(z) - ay) @ x
        if config.algorithm == "gd":
            x = step_gd(x, grad, config.eta)
        elif config.algorithm == "scaled_gd":
            x = step_scaled_gd(x, grad, config.eta)
        elif config.algorithm == "scaled_gd_lambda":
            x = step_scaled_gd_lambda(x, grad, config.eta, config.lam)
        else:
            x = step_prec_gd(x, grad, config.eta, cur_loss)

    elapsed = time.perf_counter_ns() - start
    if not records or records[-1].t != t:
        if checkpoint_hook is not None:
            checkpoint_hook(t, x.copy())
        rel_op = None
        if oracle is not None:
            rel_op = spectral_norm(x @ x.T - m_star)[0] / norm_m
        metrics = None
        if collect_diagnostics:
            metrics = phase_metrics(decompose_iterate(x, oracle), oracle, config.lam)
        records.append(TrajectoryRecord(t=t, loss=cur_loss, rel_err_fro=rel_fro,
                                        rel_err_op=rel_op, metrics=metrics,
                                        elapsed_ms=elapsed / 1e6))
    final = IterateState(x=x, t=t, loss=cur_loss, elapsed_ns=elapsed)
    return Trajectory(records=tuple(records), stop_reason=stop_reason,
                      final_state=final)
