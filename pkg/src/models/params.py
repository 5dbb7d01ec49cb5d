"""
Mixture Model Parameters

Parameter containers, fit configuration, EM traces and the JSON model-file
codec for the mixture of logistic experts.

Sign convention: the prediction experts use P(y=1 | x, k) = 1 / (1 + exp(psi_k . x)),
so a larger psi_k . x means a LOWER open probability.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config.settings import FIT_CONFIG, OUTPUT_CONFIG, format_error_message

logger = logging.getLogger(__name__)


@dataclass
class MixtureParams:
    """
    Assignment weights theta ((M-1) x m, context M pinned to zero) and
    prediction weights psi (M x n).
    """

    theta: np.ndarray
    psi: np.ndarray
    schema_hash: str = ""

    def __post_init__(self):
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        theta = np.asarray(self.theta, dtype=float)
        if theta.size == 0:
            m = theta.shape[-1] if theta.ndim == 2 else 0
            theta = np.zeros((0, m))
        self.theta = np.atleast_2d(theta)
        if self.theta.shape[0] != self.psi.shape[0] - 1:
            raise ValueError(format_error_message(
                "dimension_mismatch", name="theta rows", expected=self.psi.shape[0] - 1, actual=self.theta.shape[0]))
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.psi))):
            raise ValueError("Mixture parameters must be finite")

    @property
    def contexts(self) -> int:
        return self.psi.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def n(self) -> int:
        return self.psi.shape[1]

    @classmethod
    def zeros(cls, contexts: int, m: int, n: int, schema_hash: str = "") -> "MixtureParams":
        return cls(np.zeros((contexts - 1, m)), np.zeros((contexts, n)), schema_hash)

    def copy(self) -> "MixtureParams":
        return MixtureParams(self.theta.copy(), self.psi.copy(), self.schema_hash)

    def squared_norm(self) -> float:
        return float(np.sum(self.theta ** 2) + np.sum(self.psi ** 2))

    def max_delta(self, other: "MixtureParams") -> float:
        deltas = [np.max(np.abs(self.psi - other.psi))]
        if self.theta.size:
            deltas.append(np.max(np.abs(self.theta - other.theta)))
        return float(max(deltas))


@dataclass
class FitConfig:
    """EM settings; defaults come from FIT_CONFIG."""

    contexts: int = FIT_CONFIG["contexts"]
    tolerance: float = FIT_CONFIG["tolerance"]
    max_iter: int = FIT_CONFIG["max_iter"]
    restarts: int = FIT_CONFIG["restarts"]
    seed: int = FIT_CONFIG["seed"]
    l2: float = FIT_CONFIG["l2"]
    inner_tolerance: float = FIT_CONFIG["inner_tolerance"]
    inner_max_iter: int = FIT_CONFIG["inner_max_iter"]
    logit_clamp: float = FIT_CONFIG["logit_clamp"]
    n_jobs: int = FIT_CONFIG["n_jobs"]

    def __post_init__(self):
        problems = []
        if self.contexts < 1:
            problems.append("contexts must be >= 1")
        if self.tolerance <= 0:
            problems.append("tolerance must be > 0")
        if self.restarts < 1:
            problems.append("restarts must be >= 1")
        if self.max_iter < 1:
            problems.append("max_iter must be >= 1")
        if self.l2 < 0:
            problems.append("l2 must be >= 0")
        if self.n_jobs < 1:
            problems.append("n_jobs must be >= 1")
        if problems:
            raise ValueError(format_error_message("bad_fit_config", error="; ".join(problems)))

    def echo(self) -> Dict:
        """Settings that determine the fitted values (n_jobs excluded: it never changes results)."""
        data = asdict(self)
        data.pop("n_jobs")
        return data


@dataclass
class IterationRecord:
    iteration: int
    log_likelihood: float
    objective: float
    max_param_delta: float
    wall_time: float
    degraded: bool = False


@dataclass
class EmTrace:
    """Per-iteration history of one EM restart."""

    restart: int
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False

    def log_likelihoods(self) -> np.ndarray:
        return np.array([r.log_likelihood for r in self.records])

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def final_log_likelihood(self) -> float:
        return self.records[-1].log_likelihood if self.records else float("-inf")

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective if self.records else float("-inf")

    def is_monotonic(self, slack: float = FIT_CONFIG["monotonic_slack"]) -> bool:
        """True when the penalized objective never drops by more than slack."""
        values = self.objectives()
        return bool(np.all(np.diff(values) >= -slack)) if len(values) > 1 else True


@dataclass
class FitResult:
    params: MixtureParams
    trace: EmTrace
    traces: List[EmTrace]
    best_restart: int
    config: FitConfig

    @property
    def final_log_likelihood(self) -> float:
        return self.trace.final_log_likelihood


def params_to_dict(params: MixtureParams, config: Optional[FitConfig] = None,
                   final_loglik: Optional[float] = None) -> Dict:
    return {
        "version": OUTPUT_CONFIG["model_format_version"],
        "M": params.contexts,
        "m": params.m,
        "n": params.n,
        "schema_hash": params.schema_hash,
        "theta": params.theta.tolist(),
        "psi": params.psi.tolist(),
        "config": config.echo() if config is not None else {},
        "final_loglik": final_loglik,
    }


def params_from_dict(data: Dict) -> MixtureParams:
    contexts, m, n = int(data["M"]), int(data["m"]), int(data["n"])
    theta = np.array(data["theta"], dtype=float).reshape(contexts - 1, m)
    psi = np.array(data["psi"], dtype=float).reshape(contexts, n)
    return MixtureParams(theta, psi, data.get("schema_hash", ""))


def save_model(params: MixtureParams, path, config: Optional[FitConfig] = None,
               final_loglik: Optional[float] = None) -> Path:
    """
    Write a model file. Floats use Python's shortest round-trip repr, so a
    reload reproduces every parameter bit for bit and equal fits give
    byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params_to_dict(params, config, final_loglik), f, indent=2)
        f.write("\n")
    logger.info(f"Saved model with M={params.contexts}, m={params.m}, n={params.n} to {path}")
    return path


def load_model(path) -> MixtureParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(format_error_message("file_not_found", path=path))
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    params = params_from_dict(data)
    logger.info(f"Loaded model with M={params.contexts} from {path}")
    return params
