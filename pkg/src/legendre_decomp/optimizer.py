"""e-projection solvers: gradient descent and natural gradient (Newton).

Both start from ``theta = 0`` (the uniform distribution) and stop once the
largest moment residual ``|eta_v - eta_hat_v|`` is at most ``tolerance``.
That residual is exactly the gradient of the KL divergence, so the stopping
rule is a first-order optimality test.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.linalg

from .errors import DivergenceError, NumericalError
from .model import ModelState, compute_eta_hat, fisher_matrix, kl_divergence
from .poset_basis import Basis
from .tensor_core import NormalizedTensor

log = logging.getLogger(__name__)

GD = "gd"
NG = "ng"
RIDGE_LADDER = (1e-10, 1e-8, 1e-6, 1e-4, 1e-2)
MAX_HALVINGS = 20
# absolute slack when comparing KL values that agree to rounding error
KL_SLACK = 1e-12


@dataclass
class SolverConfig:
    algorithm: str = NG
    learning_rate: float = 0.1
    tolerance: float = 1e-5
    max_iterations: int | None = None
    damping: float = 0.0
    record_trace: bool = False

    def __post_init__(self):
        if self.algorithm not in (GD, NG):
            raise ValueError(f"algorithm must be 'gd' or 'ng', got {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.max_iterations is None:
            self.max_iterations = 1_000_000 if self.algorithm == GD else 100
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass
class DecompositionResult:
    q: NormalizedTensor
    theta: np.ndarray
    eta: np.ndarray
    eta_hat: np.ndarray
    basis: Basis
    psi: float
    kl: float
    iterations: int
    wall_time: float
    converged: bool
    algorithm: str
    tolerance: float
    setup_time: float = 0.0
    trace: list[tuple[int, float, float, float]] | None = field(default=None, repr=False)

    @property
    def time_per_iteration(self) -> float:
        """Loop time per iteration, excluding the one-off setup."""
        return (self.wall_time - self.setup_time) / max(self.iterations, 1)

    @property
    def max_residual(self) -> float:
        if not len(self.eta):
            return 0.0
        return float(np.max(np.abs(self.eta - self.eta_hat)))


def gradient(eta, eta_hat) -> np.ndarray:
    """Gradient of KL(P, Q) with respect to theta: ``eta - eta_hat``."""
    eta = np.asarray(eta, dtype=np.float64)
    eta_hat = np.asarray(eta_hat, dtype=np.float64)
    if eta.shape != eta_hat.shape:
        raise ValueError(f"basis mismatch: {eta.shape} vs {eta_hat.shape}")
    return eta - eta_hat


def _max_abs(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if len(r) else 0.0


class _Problem:
    """Input-side quantities fixed for a whole solve."""

    def __init__(self, p: NormalizedTensor, basis: Basis):
        if not p.space.same_as(basis.space):
            raise ValueError("input and basis live on different sample spaces")
        self.p = p
        self.basis = basis
        self.eta_hat = compute_eta_hat(p, basis)
        support = p.probs[p.probs > 0]
        self.neg_entropy = float(np.dot(support, np.log(support)))

    def state(self, theta) -> ModelState:
        return ModelState.at(self.basis, theta, self.p.total_mass)

    def objective(self, state: ModelState) -> float:
        # KL(P, Q) = psi - <theta, eta_hat> - H(P); stays finite when q underflows
        return state.psi - float(np.dot(state.theta, self.eta_hat)) + self.neg_entropy


def _result(problem, state, iterations, started, converged, algorithm, cfg, trace, setup):
    kl = kl_divergence(problem.p, state.q)
    if not np.isfinite(kl):
        kl = max(problem.objective(state), 0.0)
    return DecompositionResult(
        q=state.q,
        theta=np.array(state.theta),
        eta=np.array(state.eta),
        eta_hat=problem.eta_hat,
        basis=problem.basis,
        psi=state.psi,
        kl=kl,
        iterations=iterations,
        wall_time=time.perf_counter() - started,
        converged=converged,
        algorithm=algorithm,
        tolerance=cfg.tolerance,
        setup_time=setup,
        trace=trace,
    )


def _record(trace, problem, state, iteration, residual, started):
    if trace is not None:
        elapsed_ms = 1000.0 * (time.perf_counter() - started)
        trace.append((iteration, problem.objective(state), residual, elapsed_ms))


def solve_gd(p: NormalizedTensor, basis: Basis, cfg: SolverConfig | None = None) -> DecompositionResult:
    """Plain gradient descent ``theta <- theta - lr * (eta - eta_hat)``.

    All coordinates move together once per sweep.
    """
    cfg = cfg or SolverConfig(algorithm=GD)
    started = time.perf_counter()
    problem = _Problem(p, basis)
    trace = [] if cfg.record_trace else None
    state = problem.state(np.zeros(len(basis)))
    setup = time.perf_counter() - started
    iterations = 0
    while True:
        residual = gradient(state.eta, problem.eta_hat)
        worst = _max_abs(residual)
        _record(trace, problem, state, iterations, worst, started)
        if worst <= cfg.tolerance:
            return _result(problem, state, iterations, started, True, GD, cfg, trace, setup)
        if iterations >= cfg.max_iterations:
            log.warning("gradient descent stopped after %d iterations (residual %.3g)", iterations, worst)
            return _result(problem, state, iterations, started, False, GD, cfg, trace, setup)
        theta = state.theta - cfg.learning_rate * residual
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(
                f"theta diverged at iteration {iterations + 1}; use a smaller learning rate"
            )
        try:
            state = problem.state(theta)
        except NumericalError as exc:
            raise DivergenceError(
                f"{exc} at iteration {iterations + 1}; use a smaller learning rate"
            ) from None
        iterations += 1


def newton_direction(g: np.ndarray, residual: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Solve ``g x = residual`` for symmetric PSD ``g``.

    Tries a Cholesky factorization at ``damping``, then along an escalating
    ridge ladder, then a symmetric indefinite factorization at the largest
    ridge.
    """
    n = len(residual)
    eye = np.eye(n)
    ladder = [damping] + [lam for lam in RIDGE_LADDER if lam > damping]
    for lam in ladder:
        try:
            factor = scipy.linalg.cho_factor(g + lam * eye, check_finite=False)
            x = scipy.linalg.cho_solve(factor, residual, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            continue
        if np.all(np.isfinite(x)):
            if lam > damping:
                log.debug("Fisher matrix regularized with ridge %.0e", lam)
            return x
    try:
        x = scipy.linalg.solve(g + ladder[-1] * eye, residual, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        x = None
    if x is None or not np.all(np.isfinite(x)):
        raise NumericalError("Fisher matrix is singular even with ridge damping")
    return x


def solve_ng(p: NormalizedTensor, basis: Basis, cfg: SolverConfig | None = None) -> DecompositionResult:
    """Natural gradient: ``theta <- theta - G^{-1} (eta - eta_hat)``.

    The Fisher matrix is the Hessian of the KL divergence, so this is
    Newton's method. A step that increases KL is halved until it does not.
    """
    cfg = cfg or SolverConfig(algorithm=NG)
    started = time.perf_counter()
    problem = _Problem(p, basis)
    trace = [] if cfg.record_trace else None
    state = problem.state(np.zeros(len(basis)))
    current = problem.objective(state)
    setup = time.perf_counter() - started
    iterations = 0
    while True:
        residual = gradient(state.eta, problem.eta_hat)
        worst = _max_abs(residual)
        _record(trace, problem, state, iterations, worst, started)
        if worst <= cfg.tolerance:
            return _result(problem, state, iterations, started, True, NG, cfg, trace, setup)
        if iterations >= cfg.max_iterations:
            log.warning("natural gradient stopped after %d iterations (residual %.3g)", iterations, worst)
            return _result(problem, state, iterations, started, False, NG, cfg, trace, setup)
        step = newton_direction(fisher_matrix(state), residual, cfg.damping)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            try:
                candidate = problem.state(state.theta - scale * step)
                value = problem.objective(candidate)
            except NumericalError:
                value = np.inf
            if value <= current + KL_SLACK:
                break
            scale *= 0.5
        else:
            raise NumericalError(
                f"no decrease of the KL divergence after {MAX_HALVINGS} step halvings"
            )
        state, current = candidate, value
        iterations += 1


def decompose(p: NormalizedTensor, basis: Basis, cfg: SolverConfig | None = None) -> DecompositionResult:
    """Project ``p`` onto the distributions decomposable over ``basis``."""
    cfg = cfg or SolverConfig()
    solver = solve_gd if cfg.algorithm == GD else solve_ng
    return solver(p, basis, cfg)


TRACE_COLUMNS = ("iteration", "kl", "max_residual", "wall_time_ms")


def write_trace(result: DecompositionResult, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for iteration, kl, residual, ms in result.trace or ():
        writer.writerow((iteration, repr(kl), repr(residual), f"{ms:.3f}"))
