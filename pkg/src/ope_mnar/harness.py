"""Seed-replicated experiments and the MSE / squared-bias / variance sweep over alpha."""
from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ConfigurationError
from .env import (
    STREAM_TRAIN,
    EnvModel,
    PolicyValue,
    make_env,
    sample_dataset,
    true_policy_value,
)
from .estimators import (
    dm_value,
    embedding_weights,
    heuristic_theta_provider,
    mips,
    mips_roips,
    true_theta,
)
from .fm import FmTrainConfig, fm_train

logger = logging.getLogger(__name__)

ESTIMATORS = ("dm-fm", "mips", "mips-true-roips", "mips-heuristic-roips")
THREADS_ENV_VAR = "OPE_MNAR_THREADS"


class StatisticsError(ValueError):
    pass


class ReplicationError(RuntimeError):
    def __init__(self, seed: int, alpha: float, cause: BaseException):
        super().__init__(f"seed {seed} at alpha={alpha:g} failed: {cause!r}")
        self.seed = seed
        self.alpha = alpha
        self.cause = cause


@dataclass(frozen=True)
class SweepConfig:
    """Everything needed to reproduce one alpha sweep.

    Environment fields mirror :func:`ope_mnar.env.make_env` (alpha excluded);
    ``fm_*`` fields configure the direct-method reward model. ``fm_theta``
    selects which observation propensities weight its training loss.
    """

    dim_context: int = 5
    n_actions: int = 500
    n_embeddings: int = 5
    len_list: int = 5
    beta: float = 1.0
    epsilon: float = 0.2
    reward_noise: float = 0.5
    position_decay: float = 0.9
    env_seed: int = 12345
    alphas: Tuple[float, ...] = (0.0, 1.0, 2.0, 3.0)
    n: int = 1000
    n_seeds: int = 100
    n_mc: int = 100_000
    eval_seed: int = 0
    estimators: Tuple[str, ...] = ESTIMATORS
    on_policy: bool = False
    resample_env: bool = False
    fm_rank: int = 10
    fm_learning_rate: float = 0.01
    fm_epochs: int = 50
    fm_l2: float = 1e-4
    fm_init_scale: float = 0.01
    fm_theta: str = "true"

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.n_seeds < 2:
            raise ConfigurationError("n_seeds must be >= 2 for the variance to be defined")
        if not self.alphas:
            raise ConfigurationError("alphas must be non-empty")
        if any(a < 0 for a in self.alphas):
            raise ConfigurationError("alphas must be non-negative")
        if self.n < 1 or self.n_mc < 1:
            raise ConfigurationError("n and n_mc must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigurationError(
                f"estimators must be a non-empty subset of {list(ESTIMATORS)}, got {sorted(unknown)}"
            )
        if self.fm_theta not in ("true", "heuristic"):
            raise ConfigurationError("fm_theta must be 'true' or 'heuristic'")
        # fail early on bad environment / training parameters
        self.fm_config(0)
        self.env(0.0)

    def env(self, alpha: float, env_seed: Optional[int] = None) -> EnvModel:
        return make_env(
            dim_context=self.dim_context,
            n_actions=self.n_actions,
            n_embeddings=self.n_embeddings,
            len_list=self.len_list,
            alpha=alpha,
            beta=self.beta,
            epsilon=self.epsilon,
            reward_noise=self.reward_noise,
            position_decay=self.position_decay,
            env_seed=self.env_seed if env_seed is None else env_seed,
        )

    def fm_config(self, seed: int) -> FmTrainConfig:
        return FmTrainConfig(
            rank=self.fm_rank,
            learning_rate=self.fm_learning_rate,
            epochs=self.fm_epochs,
            l2=self.fm_l2,
            init_scale=self.fm_init_scale,
            seed=seed,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["alphas"] = list(self.alphas)
        out["estimators"] = list(self.estimators)
        return out


def mse_decomposition(
    estimates: Sequence[float], true_value: Union[float, Sequence[float]]
) -> Tuple[float, float, float]:
    """Split the MSE of replicated estimates into squared bias and variance.

    ``true_value`` may be a scalar or one truth per replication (when the
    environment is resampled per seed); errors are then taken pairwise.
    Variance is the population (``ddof=0``) variance, so
    ``mse == squared_bias + variance`` up to rounding.
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.ndim != 1 or estimates.size < 2:
        raise StatisticsError("need at least two estimates")
    err = np.broadcast_to(np.asarray(true_value, dtype=float), estimates.shape) - estimates
    mse = float(np.mean(err**2))
    mean_err = float(np.mean(err))
    squared_bias = mean_err**2
    variance = float(np.mean((err - mean_err) ** 2))
    return mse, squared_bias, variance


def n_workers() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")


def _seed_env(cfg: SweepConfig, alpha: float, seed: int) -> EnvModel:
    if not cfg.resample_env:
        return cfg.env(alpha)
    mixed = int(np.random.SeedSequence([cfg.env_seed, seed]).generate_state(1)[0])
    return cfg.env(alpha, env_seed=mixed)


def _truth(cfg: SweepConfig, env: EnvModel) -> PolicyValue:
    policy = env.logging_policy if cfg.on_policy else env.target_policy
    return true_policy_value(env, cfg.n_mc, cfg.eval_seed, policy=policy)


def evaluate_seed(cfg: SweepConfig, env: EnvModel, seed: int) -> Dict[str, float]:
    """Sample one dataset and evaluate every rostered estimator on it."""
    data = sample_dataset(env, cfg.n, seed)
    target = env.logging_policy if cfg.on_policy else env.target_policy
    logging_ = env.logging_policy
    emb = env.embedding_map
    out: Dict[str, float] = {}
    w = None
    if any(name != "dm-fm" for name in cfg.estimators):
        w = embedding_weights(data, target, logging_, emb)
    for name in cfg.estimators:
        if name == "mips":
            out[name] = mips(data, target, logging_, emb, weights=w).value
        elif name == "mips-true-roips":
            out[name] = mips_roips(data, target, logging_, emb, true_theta(env), weights=w).value
        elif name == "mips-heuristic-roips":
            theta = heuristic_theta_provider(data)
            out[name] = mips_roips(data, target, logging_, emb, theta, weights=w).value
        elif name == "dm-fm":
            theta = true_theta(env) if cfg.fm_theta == "true" else heuristic_theta_provider(data)
            train_seed = int(np.random.SeedSequence([env.env_seed, STREAM_TRAIN, seed]).generate_state(1)[0])
            model = fm_train(data, theta, cfg.fm_config(train_seed), env.n_embeddings)
            out[name] = dm_value(data, target, emb, model, name=name).value
    return out


def _seed_task(args) -> Tuple[int, Dict[str, float], Optional[float]]:
    cfg, alpha, seed = args
    env = _seed_env(cfg, alpha, seed)
    try:
        estimates = evaluate_seed(cfg, env, seed)
        truth = _truth(cfg, env).value if cfg.resample_env else None
    except Exception as exc:
        raise ReplicationError(seed, alpha, exc) from exc
    return seed, estimates, truth


@dataclass
class Replications:
    alpha: float
    estimates: Dict[str, np.ndarray]
    true_value: Union[float, np.ndarray]
    true_stderr: float


def run_replications(
    cfg: SweepConfig, alpha: float, workers: Optional[int] = None
) -> Replications:
    """Evaluate every rostered estimator on ``cfg.n_seeds`` independent datasets."""
    workers = n_workers() if workers is None else workers
    tasks = [(cfg, float(alpha), s) for s in range(cfg.n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_task, tasks))
    else:
        results = [_seed_task(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    estimates = {
        name: np.array([r[1][name] for r in results]) for name in cfg.estimators
    }
    if cfg.resample_env:
        truths = np.array([r[2] for r in results])
        true_value: Union[float, np.ndarray] = truths
        true_stderr = float("nan")
    else:
        truth = _truth(cfg, cfg.env(alpha))
        true_value, true_stderr = truth.value, truth.stderr
    return Replications(float(alpha), estimates, true_value, true_stderr)


SUMMARY_COLUMNS = (
    "alpha",
    "estimator",
    "mse",
    "squared_bias",
    "variance",
    "mean_estimate",
    "true_value",
    "n_seeds",
)


@dataclass(frozen=True)
class SummaryRow:
    alpha: float
    estimator: str
    mse: float
    squared_bias: float
    variance: float
    mean_estimate: float
    true_value: float
    n_seeds: int

    def decomposition_gap(self) -> float:
        return abs(self.mse - self.squared_bias - self.variance)

    def satisfies_decomposition(self, rtol: float = 1e-9) -> bool:
        return self.decomposition_gap() <= rtol * max(1.0, self.mse)


@dataclass
class SweepSummary:
    rows: List[SummaryRow] = field(default_factory=list)
    # (alpha, estimator) -> standard error of the mean estimate
    stderr: Dict[Tuple[float, str], float] = field(default_factory=dict)
    true_stderr: Dict[float, float] = field(default_factory=dict)

    def row(self, alpha: float, estimator: str) -> SummaryRow:
        for r in self.rows:
            if r.alpha == alpha and r.estimator == estimator:
                return r
        raise KeyError((alpha, estimator))

    def alphas(self) -> List[float]:
        return sorted({r.alpha for r in self.rows})

    def estimators(self) -> List[str]:
        seen: List[str] = []
        for r in self.rows:
            if r.estimator not in seen:
                seen.append(r.estimator)
        return seen


def summarize(reps: Replications, summary: SweepSummary) -> None:
    truth = float(np.mean(reps.true_value))
    summary.true_stderr[reps.alpha] = reps.true_stderr
    for name, est in reps.estimates.items():
        mse, bias2, var = mse_decomposition(est, reps.true_value)
        summary.rows.append(
            SummaryRow(reps.alpha, name, mse, bias2, var, float(est.mean()), truth, est.size)
        )
        summary.stderr[(reps.alpha, name)] = float(est.std(ddof=1) / np.sqrt(est.size))


def alpha_sweep(cfg: SweepConfig, workers: Optional[int] = None) -> SweepSummary:
    """Run :func:`run_replications` at every alpha and decompose each estimator's MSE."""
    summary = SweepSummary()
    for alpha in cfg.alphas:
        logger.info("alpha=%g: %d seeds", alpha, cfg.n_seeds)
        summarize(run_replications(cfg, alpha, workers), summary)
    return summary
