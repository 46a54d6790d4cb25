"""Off-policy estimators of a ranking policy's value under MNAR rewards.

Policies are callables mapping contexts of shape (n, d_x) to per-position
action distributions of shape (n, K, |A|). Reward models used by the direct
method map contexts to an expected-reward table of shape (n, K, |E|).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ConfigurationError, EmbeddingMap, LoggedDataset, marginal_embedding_probs
from .env import EnvModel, Policy, observation_marginals

RewardModel = Callable[[np.ndarray], np.ndarray]


class CommonSupportError(ValueError):
    """Target puts mass on an embedding the logging policy never chooses."""


class PropensityError(ValueError):
    """An observation propensity is not in (0, 1]."""


@dataclass(frozen=True)
class EstimatorReport:
    estimator_name: str
    value: float
    per_position: np.ndarray
    n_effective: int


def _report(name: str, per_position: np.ndarray, n_effective: int) -> EstimatorReport:
    per_position = np.asarray(per_position, dtype=float)
    return EstimatorReport(
        estimator_name=name,
        value=float(per_position.sum()),
        per_position=per_position,
        n_effective=int(n_effective),
    )


# ---------------------------------------------------------------------------
# observation propensities


@dataclass(frozen=True)
class ThetaProvider:
    """Source of ``theta(o_k = 1 | x)``.

    ``lookup`` maps contexts (n, d_x) to propensities (n, K). ``mode`` is one
    of ``"true-model"``, ``"heuristic"`` or ``"custom"``.
    """

    mode: str
    lookup: Callable[[np.ndarray], np.ndarray]

    def __call__(self, context: np.ndarray) -> np.ndarray:
        theta = np.asarray(self.lookup(np.atleast_2d(context)), dtype=float)
        if np.any(~np.isfinite(theta)) or np.any(theta <= 0) or np.any(theta > 1):
            raise PropensityError("observation propensities must lie in (0, 1]")
        return theta


def true_theta(env: EnvModel) -> ThetaProvider:
    return ThetaProvider("true-model", lambda x: observation_marginals(x, env))


def heuristic_theta(data: LoggedDataset, floor: bool = True) -> np.ndarray:
    """Context-free propensity: share of records observed at each position.

    Clipped below at ``1 / n`` so a never-observed position stays finite;
    ``floor=False`` disables the clip and exists only for negative tests.
    """
    if data.n < 1:
        raise ConfigurationError("need at least one record")
    theta = data.observed.mean(axis=0)
    if floor:
        theta = np.maximum(theta, 1.0 / data.n)
    return theta


def heuristic_theta_provider(data: LoggedDataset, floor: bool = True) -> ThetaProvider:
    theta = heuristic_theta(data, floor=floor)
    return ThetaProvider(
        "heuristic", lambda x: np.broadcast_to(theta, (x.shape[0], theta.size))
    )


def constant_theta(value: float, len_list: int) -> ThetaProvider:
    return ThetaProvider("custom", lambda x: np.full((x.shape[0], len_list), float(value)))


# ---------------------------------------------------------------------------
# importance weights


def embedding_weight(
    context: np.ndarray,
    embedding: int,
    position: int,
    target: np.ndarray,
    logging: np.ndarray,
    emb: EmbeddingMap,
) -> float:
    """Marginal weight ``pi(e | x) / pi_0(e | x)`` at one position.

    ``target`` and ``logging`` are the (K, |A|) distributions of both policies
    at ``context``. A zero logging marginal yields 0 when the target marginal is
    also 0 and raises :class:`CommonSupportError` otherwise.
    """
    p = marginal_embedding_probs(np.asarray(target)[position], emb)[embedding]
    p0 = marginal_embedding_probs(np.asarray(logging)[position], emb)[embedding]
    if p0 == 0.0:
        if p == 0.0:
            return 0.0
        raise CommonSupportError(
            f"embedding {embedding} at position {position} has target mass {p} but no logging mass"
        )
    return float(p / p0)


def embedding_weights(
    data: LoggedDataset, target: Policy, logging: Policy, emb: EmbeddingMap
) -> np.ndarray:
    """Marginal weights of the logged embeddings, shape (n, K).

    Common support is checked for every embedding at the logged contexts, not
    only the logged ones, since an unsupported embedding biases the estimate
    without ever being logged.
    """
    p_all = marginal_embedding_probs(target(data.context), emb)
    p0_all = marginal_embedding_probs(logging(data.context), emb)
    unsupported = (p0_all == 0.0) & (p_all > 0.0)
    if np.any(unsupported):
        i, k, e = np.argwhere(unsupported)[0]
        raise CommonSupportError(
            f"record {i}, position {k}: target mass on embedding {e} with no logging mass"
        )
    idx = data.embeddings[..., None]
    p = np.take_along_axis(p_all, idx, -1)[..., 0]
    p0 = np.take_along_axis(p0_all, idx, -1)[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p0 == 0.0, 0.0, p / p0)


# ---------------------------------------------------------------------------
# estimators


def _weighted_position_means(data: LoggedDataset, weighted_reward: np.ndarray) -> np.ndarray:
    # mean over all n records; unobserved entries contribute zero
    contrib = np.where(data.observed, weighted_reward, 0.0)
    return contrib.sum(axis=0) / data.n


def mips(
    data: LoggedDataset,
    target: Policy,
    logging: Policy,
    emb: EmbeddingMap,
    weights: Optional[np.ndarray] = None,
) -> EstimatorReport:
    """Marginalized IPS over embeddings, ignoring missing rewards.

    ``V_k = (1/n) sum_{i: o_ik = 1} w(x_i, e_ik) r_ik``. Precomputed
    ``weights`` (see :func:`embedding_weights`) may be passed to share work
    between estimators.
    """
    w = embedding_weights(data, target, logging, emb) if weights is None else weights
    per_position = _weighted_position_means(data, w * data.observed_rewards())
    return _report("mips", per_position, data.observed.sum())


def mips_roips(
    data: LoggedDataset,
    target: Policy,
    logging: Policy,
    emb: EmbeddingMap,
    theta: ThetaProvider,
    weights: Optional[np.ndarray] = None,
    name: Optional[str] = None,
) -> EstimatorReport:
    """Marginalized IPS with inverse reward-observation propensities.

    ``V_k = (1/n) sum_{i: o_ik = 1} w(x_i, e_ik) r_ik / theta(o_k | x_i)``.
    """
    w = embedding_weights(data, target, logging, emb) if weights is None else weights
    propensity = theta(data.context)
    if propensity.shape != data.observed.shape:
        raise PropensityError(
            f"propensity shape {propensity.shape} != data shape {data.observed.shape}"
        )
    per_position = _weighted_position_means(data, w * data.observed_rewards() / propensity)
    if name is None:
        name = {"true-model": "mips-true-roips", "heuristic": "mips-heuristic-roips"}.get(
            theta.mode, "mips-roips"
        )
    return _report(name, per_position, data.observed.sum())


def dm_value(
    data: LoggedDataset,
    target: Policy,
    emb: EmbeddingMap,
    reward_model: RewardModel,
    name: str = "dm",
) -> EstimatorReport:
    """Direct method: plug a reward model into the target's embedding marginals.

    ``V_k = (1/n) sum_i sum_e pi(e | x_i, k) qhat(x_i, e, k)``.
    """
    marg = marginal_embedding_probs(target(data.context), emb)
    q_hat = np.asarray(reward_model(data.context), dtype=float)
    if q_hat.shape != marg.shape:
        raise ConfigurationError(
            f"reward model returned shape {q_hat.shape}, expected {marg.shape}"
        )
    per_position = np.sum(marg * q_hat, axis=-1).mean(axis=0)
    return _report(name, per_position, data.n * data.len_list)
