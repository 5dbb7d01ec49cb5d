"""
Mixture Module

Mixture of logistic experts with a softmax context-assignment model,
trained by EM:

    P(y | x_hat, x) = sum_k P(k | x_hat, theta) * P(y | x, psi_k)
    P(k | x_hat)    = softmax([theta_1 . x_hat, ..., theta_{M-1} . x_hat, 0])_k
    P(y=1 | x, k)   = 1 / (1 + exp(psi_k . x))

Note the sign of the expert: a LARGER psi_k . x means a LOWER open
probability, the opposite of the usual logistic convention.

Every probability is computed in log space with log-sum-exp, and logits are
clamped at +/- logit_clamp so no probability rounds to exactly 0 or 1.
M-steps are weighted logistic regressions solved with L-BFGS-B; a solve that
does not improve its block of the Q function keeps the incumbent, so the
penalized objective never decreases (generalized EM).
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from config.settings import FIT_CONFIG, format_error_message
from models.params import EmTrace, FitConfig, FitResult, IterationRecord, MixtureParams

from .features import ExampleBatch

# Configure logging
logger = logging.getLogger(__name__)

LOSS_KINDS = ("assignment", "prediction", "joint")


class SchemaMismatchError(ValueError):
    """Model and examples were built against different feature schemas."""


@dataclass
class MStepStatus:
    success: bool
    degraded: bool
    iterations: int
    message: str = ""


def check_schema(params: MixtureParams, schema_hash: str):
    """Raise SchemaMismatchError when both hashes are known and differ."""
    if params.schema_hash and schema_hash and params.schema_hash != schema_hash:
        raise SchemaMismatchError(format_error_message(
            "schema_mismatch", model=params.schema_hash, features=schema_hash))


def _rows(values, width: int, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(values, dtype=float))
    if matrix.shape[1] != width:
        raise ValueError(format_error_message("dimension_mismatch", name=name, expected=width, actual=matrix.shape[1]))
    return matrix


def _check_batch(params: MixtureParams, batch: ExampleBatch):
    if len(batch) == 0:
        raise ValueError(format_error_message("empty_dataset"))
    _rows(batch.x_hat, params.m, "x_hat")
    _rows(batch.x, params.n, "x")
    check_schema(params, batch.schema_hash)


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

def assignment_logits(theta: np.ndarray, x_hat: np.ndarray, clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """N x M logits; the last column is the pinned context."""
    raw = x_hat @ theta.T
    return np.hstack([np.clip(raw, -clamp, clamp), np.zeros((len(x_hat), 1))])


def log_assignment_probs(theta: np.ndarray, x_hat: np.ndarray,
                         clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    logits = assignment_logits(theta, x_hat, clamp)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def assignment_probs(theta: np.ndarray, x_hat, clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """
    Context distribution for one x_hat (vector result) or for a stack of
    them (one row each). Rows lie on the simplex.

    Raises:
        ValueError: If x_hat does not have theta's width
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    single = np.ndim(x_hat) == 1
    x_hat = _rows(x_hat, theta.shape[1], "x_hat")
    probs = np.exp(log_assignment_probs(theta, x_hat, clamp))
    return probs[0] if single else probs


def expert_logits(psi: np.ndarray, x: np.ndarray, clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    return np.clip(x @ np.atleast_2d(psi).T, -clamp, clamp)


def log_label_probs(psi: np.ndarray, x: np.ndarray, y: np.ndarray,
                    clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """N x M matrix of log P(y_i | x_i, k)."""
    u = expert_logits(psi, x, clamp)
    return (1.0 - y)[:, None] * u - np.logaddexp(0.0, u)


def open_probability(psi_k, x, clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """
    P(y=1 | x, k) = 1 / (1 + exp(psi_k . x)).

    Raises:
        ValueError: If x and psi_k differ in length
    """
    psi_k = np.asarray(psi_k, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != len(psi_k):
        raise ValueError(format_error_message("dimension_mismatch", name="x", expected=len(psi_k), actual=len(x)))
    return float(expit(-np.clip(psi_k @ x, -clamp, clamp)))


def predict_open_rate(params: MixtureParams, x_hat, x, clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """Mixture open rate for one example."""
    x_hat = _rows(x_hat, params.m, "x_hat")
    x = _rows(x, params.n, "x")
    weights = np.exp(log_assignment_probs(params.theta, x_hat, clamp))
    opens = expit(-expert_logits(params.psi, x, clamp))
    return float((weights * opens).sum())


def predict_from_assignment(params: MixtureParams, weights: np.ndarray, x,
                            clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """Open rates of several x vectors that share one assignment distribution."""
    x = _rows(x, params.n, "x")
    return expit(-expert_logits(params.psi, x, clamp)) @ np.asarray(weights, dtype=float)


def predict_batch(params: MixtureParams, batch: ExampleBatch, clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    _check_batch(params, batch)
    weights = np.exp(log_assignment_probs(params.theta, batch.x_hat, clamp))
    opens = expit(-expert_logits(params.psi, batch.x, clamp))
    return (weights * opens).sum(axis=1)


def joint_log_probs(params: MixtureParams, batch: ExampleBatch,
                    clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """N x M matrix of log P(k | x_hat_i) + log P(y_i | x_i, k)."""
    return (log_assignment_probs(params.theta, batch.x_hat, clamp)
            + log_label_probs(params.psi, batch.x, batch.y, clamp))


def log_likelihood(params: MixtureParams, batch: ExampleBatch, clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """
    Mean per-example observed-data log-likelihood.

    Raises:
        ValueError: If the batch is empty or dimensions disagree
    """
    _check_batch(params, batch)
    return float(np.mean(logsumexp(joint_log_probs(params, batch, clamp), axis=1)))


def penalized_objective(params: MixtureParams, batch: ExampleBatch, l2: float,
                        clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """Mean log-likelihood minus l2 * ||params||^2 / N; EM never decreases it."""
    return log_likelihood(params, batch, clamp) - l2 * params.squared_norm() / len(batch)


def e_step(params: MixtureParams, batch: ExampleBatch, clamp: float = FIT_CONFIG["logit_clamp"]) -> np.ndarray:
    """Posterior context probabilities, one row per example."""
    _check_batch(params, batch)
    joint = joint_log_probs(params, batch, clamp)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def _check_responsibilities(responsibilities: np.ndarray, rows: int, contexts: int) -> np.ndarray:
    responsibilities = np.atleast_2d(np.asarray(responsibilities, dtype=float))
    if responsibilities.shape != (rows, contexts):
        raise ValueError(format_error_message(
            "dimension_mismatch", name="responsibilities", expected=(rows, contexts), actual=responsibilities.shape))
    return responsibilities


def q_value(params_new: MixtureParams, responsibilities: np.ndarray, batch: ExampleBatch,
            l2: float = FIT_CONFIG["l2"], clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """Expected complete-data log-likelihood (summed over examples) minus the L2 penalty."""
    _check_batch(params_new, batch)
    responsibilities = _check_responsibilities(responsibilities, len(batch), params_new.contexts)
    return float(np.sum(responsibilities * joint_log_probs(params_new, batch, clamp))
                 - l2 * params_new.squared_norm())


# ---------------------------------------------------------------------------
# Q blocks and their gradients
# ---------------------------------------------------------------------------

def assignment_block(theta: np.ndarray, responsibilities: np.ndarray, x_hat: np.ndarray, l2: float,
                     clamp: float = FIT_CONFIG["logit_clamp"]) -> Tuple[float, np.ndarray]:
    """Assignment part of Q and its gradient with respect to theta."""
    raw = x_hat @ theta.T
    log_pi = log_assignment_probs(theta, x_hat, clamp)
    value = float(np.sum(responsibilities * log_pi) - l2 * np.sum(theta ** 2))
    totals = responsibilities.sum(axis=1, keepdims=True)
    residual = (responsibilities[:, :-1] - totals * np.exp(log_pi[:, :-1])) * (np.abs(raw) < clamp)
    gradient = residual.T @ x_hat - 2.0 * l2 * theta
    return value, gradient


def prediction_block(psi_k: np.ndarray, weights: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float,
                     clamp: float = FIT_CONFIG["logit_clamp"]) -> Tuple[float, np.ndarray]:
    """Weighted log-likelihood of one expert minus its penalty, with gradient."""
    raw = x @ psi_k
    u = np.clip(raw, -clamp, clamp)
    value = float(np.sum(weights * ((1.0 - y) * u - np.logaddexp(0.0, u))) - l2 * np.sum(psi_k ** 2))
    residual = weights * ((1.0 - y) - expit(u)) * (np.abs(raw) < clamp)
    gradient = residual @ x - 2.0 * l2 * psi_k
    return value, gradient


def _maximize(block, start: np.ndarray, rows: int, config: FitConfig, label: str) -> Tuple[np.ndarray, MStepStatus]:
    """
    Maximize a Q block with L-BFGS-B on its 1/N-scaled negation and keep the
    incumbent unless the solution improves the block.
    """
    shape = start.shape

    def objective(flat):
        value, gradient = block(flat.reshape(shape))
        return -value / rows, -gradient.ravel() / rows

    incumbent_value, _ = objective(start.ravel())
    result = minimize(
        objective,
        start.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.inner_max_iter, "gtol": config.inner_tolerance, "ftol": 1e-12},
    )
    status = MStepStatus(success=bool(result.success), degraded=not result.success,
                         iterations=int(result.nit), message=str(result.message))
    if status.degraded:
        logger.debug(f"{label} M-step did not converge: {status.message}")
    if np.all(np.isfinite(result.x)) and result.fun <= incumbent_value:
        return result.x.reshape(shape), status
    return start.copy(), status


def m_step_theta(responsibilities: np.ndarray, x_hats: np.ndarray, config: FitConfig,
                 initial: Optional[np.ndarray] = None) -> Tuple[np.ndarray, MStepStatus]:
    """
    Weighted multinomial logistic regression with soft targets.

    Returns:
        (theta of shape (M-1) x m, solver status)
    """
    x_hats = np.atleast_2d(np.asarray(x_hats, dtype=float))
    responsibilities = np.atleast_2d(np.asarray(responsibilities, dtype=float))
    contexts = responsibilities.shape[1]
    if contexts == 1:
        return np.zeros((0, x_hats.shape[1])), MStepStatus(True, False, 0)
    start = np.zeros((contexts - 1, x_hats.shape[1])) if initial is None else np.array(initial, dtype=float)

    def block(theta):
        return assignment_block(theta, responsibilities, x_hats, config.l2, config.logit_clamp)

    return _maximize(block, start, len(x_hats), config, "theta")


def m_step_psi(weights: np.ndarray, batch: ExampleBatch, config: FitConfig,
               initial: Optional[np.ndarray] = None) -> Tuple[np.ndarray, MStepStatus]:
    """
    Weighted binary logistic regression for one expert.

    Returns:
        (psi_k of length n, solver status)
    """
    weights = np.asarray(weights, dtype=float).ravel()
    if not np.any(weights > 0):
        return np.zeros(batch.n), MStepStatus(True, False, 0, "no weight")
    start = np.zeros(batch.n) if initial is None else np.array(initial, dtype=float)

    def block(psi_k):
        return prediction_block(psi_k, weights, batch.x, batch.y, config.l2, config.logit_clamp)

    return _maximize(block, start, len(batch), config, "psi")


def m_step(responsibilities: np.ndarray, batch: ExampleBatch, config: FitConfig, incumbent: MixtureParams,
           executor: Optional[ThreadPoolExecutor] = None) -> Tuple[MixtureParams, bool]:
    """Both M-steps from a warm start. Returns the new params and whether any solve was degraded."""
    theta, theta_status = m_step_theta(responsibilities, batch.x_hat, config, incumbent.theta)

    def solve(k):
        return m_step_psi(responsibilities[:, k], batch, config, incumbent.psi[k])

    contexts = range(responsibilities.shape[1])
    solved = list(executor.map(solve, contexts)) if executor is not None else [solve(k) for k in contexts]
    psi = np.vstack([row for row, _ in solved])
    degraded = theta_status.degraded or any(status.degraded for _, status in solved)
    return MixtureParams(theta, psi, incumbent.schema_hash), degraded


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def _relative_change(previous: float, current: float) -> float:
    return abs(current - previous) / max(abs(previous), np.finfo(float).tiny)


def _fit_restart(batch: ExampleBatch, config: FitConfig, restart: int, seed_sequence: np.random.SeedSequence,
                 executor: Optional[ThreadPoolExecutor]) -> Tuple[MixtureParams, EmTrace]:
    rng = np.random.default_rng(seed_sequence)
    trace = EmTrace(restart=restart)
    started = time.perf_counter()

    responsibilities = rng.dirichlet(np.ones(config.contexts), size=len(batch))
    zeros = MixtureParams.zeros(config.contexts, batch.m, batch.n, batch.schema_hash)
    params, degraded = m_step(responsibilities, batch, config, zeros, executor)
    objective = penalized_objective(params, batch, config.l2, config.logit_clamp)
    trace.records.append(IterationRecord(
        0, log_likelihood(params, batch, config.logit_clamp), objective,
        params.max_delta(zeros), time.perf_counter() - started, degraded))

    for iteration in range(1, config.max_iter + 1):
        tick = time.perf_counter()
        responsibilities = e_step(params, batch, config.logit_clamp)
        updated, degraded = m_step(responsibilities, batch, config, params, executor)
        previous = objective
        objective = penalized_objective(updated, batch, config.l2, config.logit_clamp)
        loglik = log_likelihood(updated, batch, config.logit_clamp)
        trace.records.append(IterationRecord(
            iteration, loglik, objective, updated.max_delta(params), time.perf_counter() - tick, degraded))
        logger.debug(f"restart {restart} iteration {iteration}: loglik={loglik:.8f} objective={objective:.8f}")
        params = updated
        if _relative_change(previous, objective) < config.tolerance:
            trace.converged = True
            break

    if not trace.converged:
        logger.warning(f"Restart {restart} stopped at max_iter={config.max_iter} without converging")
    if not trace.is_monotonic():
        logger.warning(f"Restart {restart} objective decreased during EM")
    logger.info(f"Restart {restart}: {len(trace.records) - 1} iterations, final loglik {trace.final_log_likelihood:.6f}")
    return params, trace


def em_fit(batch: ExampleBatch, config: Optional[FitConfig] = None) -> FitResult:
    """
    Fit the mixture by EM with several seeded restarts.

    Each restart starts from Dirichlet(1) responsibilities drawn from its own
    child of SeedSequence(config.seed), so results do not depend on n_jobs.
    The restart with the highest final log-likelihood wins; ties go to the
    lowest restart index.

    Raises:
        ValueError: If the batch is empty or has fewer examples than contexts
    """
    config = config or FitConfig()
    if len(batch) == 0:
        raise ValueError(format_error_message("empty_dataset"))
    if config.contexts > len(batch):
        raise ValueError(format_error_message("too_many_contexts", contexts=config.contexts, examples=len(batch)))

    logger.info(f"Fitting M={config.contexts} on N={len(batch)} (m={batch.m}, n={batch.n}), "
                f"{config.restarts} restarts, seed {config.seed}")
    children = np.random.SeedSequence(config.seed).spawn(config.restarts)

    if config.n_jobs > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            fitted = list(pool.map(lambda r: _fit_restart(batch, config, r, children[r], None),
                                   range(config.restarts)))
    elif config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            fitted = [_fit_restart(batch, config, 0, children[0], pool)]
    else:
        fitted = [_fit_restart(batch, config, r, children[r], None) for r in range(config.restarts)]

    best = 0
    for restart, (_, trace) in enumerate(fitted):
        if trace.final_log_likelihood > fitted[best][1].final_log_likelihood:
            best = restart
    params, trace = fitted[best]
    logger.info(f"Best restart {best}: loglik {trace.final_log_likelihood:.6f}")
    return FitResult(params=params, trace=trace, traces=[t for _, t in fitted], best_restart=best, config=config)


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------

def permute_contexts(params: MixtureParams, order: Sequence[int]) -> MixtureParams:
    """Reorder contexts and re-pin the new last context to zero."""
    order = list(order)
    if sorted(order) != list(range(params.contexts)):
        raise ValueError(f"Not a permutation of {params.contexts} contexts: {order}")
    full = np.vstack([params.theta, np.zeros((1, params.m))])[order]
    return MixtureParams(full[:-1] - full[-1], params.psi[order].copy(), params.schema_hash)


def _analytic_gradient(kind: str, params: MixtureParams, responsibilities: np.ndarray, batch: ExampleBatch,
                       l2: float, clamp: float) -> np.ndarray:
    parts: List[np.ndarray] = []
    if kind in ("assignment", "joint") and params.contexts > 1:
        parts.append(assignment_block(params.theta, responsibilities, batch.x_hat, l2, clamp)[1].ravel())
    if kind in ("prediction", "joint"):
        for k in range(params.contexts):
            parts.append(prediction_block(params.psi[k], responsibilities[:, k], batch.x, batch.y, l2, clamp)[1])
    return np.concatenate(parts) if parts else np.zeros(0)


def _flatten(kind: str, params: MixtureParams) -> np.ndarray:
    parts = []
    if kind in ("assignment", "joint"):
        parts.append(params.theta.ravel())
    if kind in ("prediction", "joint"):
        parts.append(params.psi.ravel())
    return np.concatenate(parts)


def _unflatten(kind: str, flat: np.ndarray, params: MixtureParams) -> MixtureParams:
    theta, psi = params.theta.copy(), params.psi.copy()
    offset = 0
    if kind in ("assignment", "joint"):
        theta = flat[:theta.size].reshape(theta.shape)
        offset = theta.size
    if kind in ("prediction", "joint"):
        psi = flat[offset:offset + psi.size].reshape(psi.shape)
    return MixtureParams(theta, psi, params.schema_hash)


def gradient_check(kind: str, params: MixtureParams, batch: ExampleBatch, l2: float = FIT_CONFIG["l2"],
                   responsibilities: Optional[np.ndarray] = None, step: float = 1e-5,
                   clamp: float = FIT_CONFIG["logit_clamp"]) -> float:
    """
    Compare the analytic gradient of Q against central finite differences.

    Args:
        kind: "assignment" (theta block), "prediction" (psi block) or "joint"
        params: evaluation point
        batch: a small example set
        responsibilities: fixed weights; defaults to e_step(params, batch)

    Returns:
        Max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    if kind not in LOSS_KINDS:
        raise ValueError(format_error_message("unknown_loss", kind=kind))
    if responsibilities is None:
        responsibilities = e_step(params, batch, clamp)
    analytic = _analytic_gradient(kind, params, responsibilities, batch, l2, clamp)
    point = _flatten(kind, params)
    if point.size == 0:
        return 0.0

    numeric = np.empty_like(point)
    for idx in range(point.size):
        forward, backward = point.copy(), point.copy()
        forward[idx] += step
        backward[idx] -= step
        numeric[idx] = (q_value(_unflatten(kind, forward, params), responsibilities, batch, l2, clamp)
                        - q_value(_unflatten(kind, backward, params), responsibilities, batch, l2, clamp)) / (2 * step)

    error = float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
    logger.info(f"Gradient check ({kind}) over {point.size} coordinates: max relative error {error:.3e}")
    return error
