"""Synthetic ranking environment with missing-not-at-random reward observations.

Expected rewards depend on a ranked item only through its embedding
(category), the logging policy is a per-position softmax over expected
rewards, the target policy is epsilon-greedy, and which positions reveal
their reward is drawn from a context-dependent distribution over the
``2**K`` observation patterns whose skew toward sparse patterns is set by
``alpha``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .core import (
    ConfigurationError,
    EmbeddingMap,
    LoggedDataset,
    marginal_embedding_probs,
    random_embedding_map,
)

# tags separating the independent random streams derived from one env_seed
STREAM_ENV = 0
STREAM_DATA = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3

Policy = Callable[[np.ndarray], np.ndarray]


class DegenerateInputError(ValueError):
    """The observation model has zero total weight for some context."""


def make_rng(env_seed: int, stream: int, seed: int = 0) -> np.random.Generator:
    """Generator for one (env_seed, stream, seed) triple.

    Streams are keyed, not sequential, so adding seeds never perturbs others.
    """
    return np.random.default_rng(np.random.SeedSequence([env_seed, stream, seed]))


def observation_patterns(len_list: int) -> np.ndarray:
    """All ``2**K`` observation masks, shape (2**K, K).

    Pattern index ``p`` maps to the bits of ``p`` with the leading (most
    significant) bit at position 0, so for K=2 the order is 00, 01, 10, 11.
    """
    idx = np.arange(2**len_list)[:, None]
    shifts = np.arange(len_list - 1, -1, -1)[None, :]
    return ((idx >> shifts) & 1).astype(bool)


@dataclass(frozen=True)
class EnvModel:
    """Frozen parameters of the synthetic world.

    Use :func:`make_env` to draw the random parameters from ``env_seed``;
    ``dataclasses.replace(env, alpha=...)`` keeps every drawn parameter and
    changes only the observation bias strength.
    """

    dim_context: int
    n_actions: int
    n_embeddings: int
    len_list: int
    embedding_map: EmbeddingMap
    reward_weights: np.ndarray  # (|E|, d_x)
    reward_bias: np.ndarray  # (|E|,)
    obs_weights: np.ndarray  # (2**K, d_x)
    position_decay: float = 0.9
    alpha: float = 0.0
    beta: float = 1.0
    epsilon: float = 0.2
    reward_noise: float = 0.5
    env_seed: int = 0

    def __post_init__(self) -> None:
        if self.len_list < 1:
            raise ConfigurationError("len_list must be >= 1")
        if not (self.n_actions >= self.n_embeddings >= 1):
            raise ConfigurationError("need n_actions >= n_embeddings >= 1")
        if self.embedding_map.n_actions != self.n_actions:
            raise ConfigurationError("embedding map size differs from n_actions")
        if self.embedding_map.n_embeddings != self.n_embeddings:
            raise ConfigurationError("embedding map category count differs")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.reward_noise <= 0:
            raise ConfigurationError("reward_noise must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError("epsilon must lie in [0, 1]")
        if not 0.0 < self.position_decay <= 1.0:
            raise ConfigurationError("position_decay must lie in (0, 1]")
        if np.shape(self.reward_weights) != (self.n_embeddings, self.dim_context):
            raise ConfigurationError("reward_weights must have shape (|E|, d_x)")
        if np.shape(self.reward_bias) != (self.n_embeddings,):
            raise ConfigurationError("reward_bias must have shape (|E|,)")
        if np.shape(self.obs_weights) != (2**self.len_list, self.dim_context):
            raise ConfigurationError("obs_weights must have exactly 2**K rows of length d_x")
        for name in ("reward_weights", "reward_bias", "obs_weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # bound-policy conveniences so estimators can take ``env.target_policy``
    def logging_policy(self, context: np.ndarray) -> np.ndarray:
        return logging_policy(context, self)

    def target_policy(self, context: np.ndarray) -> np.ndarray:
        return target_policy(context, self)

    def fingerprint(self) -> str:
        return (
            f"env{self.env_seed}-A{self.n_actions}-E{self.n_embeddings}-K{self.len_list}"
            f"-alpha{self.alpha:g}-beta{self.beta:g}-eps{self.epsilon:g}"
            f"-sigma{self.reward_noise:g}-decay{self.position_decay:g}"
        )


def make_env(
    dim_context: int = 5,
    n_actions: int = 500,
    n_embeddings: int = 5,
    len_list: int = 5,
    alpha: float = 0.0,
    beta: float = 1.0,
    epsilon: float = 0.2,
    reward_noise: float = 0.5,
    position_decay: float = 0.9,
    env_seed: int = 12345,
) -> EnvModel:
    """Draw an environment; every random parameter is a function of ``env_seed``."""
    if n_embeddings < 1 or n_actions < n_embeddings:
        raise ConfigurationError("need n_actions >= n_embeddings >= 1")
    rng = make_rng(env_seed, STREAM_ENV)
    emb = random_embedding_map(n_actions, n_embeddings, rng)
    return EnvModel(
        dim_context=dim_context,
        n_actions=n_actions,
        n_embeddings=n_embeddings,
        len_list=len_list,
        embedding_map=emb,
        reward_weights=rng.standard_normal((n_embeddings, dim_context)),
        reward_bias=rng.standard_normal(n_embeddings),
        obs_weights=rng.standard_normal((2**len_list, dim_context)),
        position_decay=position_decay,
        alpha=alpha,
        beta=beta,
        epsilon=epsilon,
        reward_noise=reward_noise,
        env_seed=env_seed,
    )


def _as_contexts(context: np.ndarray, env: EnvModel):
    context = np.asarray(context, dtype=float)
    single = context.ndim == 1
    context = np.atleast_2d(context)
    if context.shape[1] != env.dim_context:
        raise ConfigurationError(
            f"context has dimension {context.shape[1]}, expected {env.dim_context}"
        )
    return context, single


def expected_reward_table(context: np.ndarray, env: EnvModel) -> np.ndarray:
    """``q[..., k, e] = decay**k * logistic(x @ w_e + b_e)``, shape (..., K, |E|)."""
    context, single = _as_contexts(context, env)
    base = expit(context @ env.reward_weights.T + env.reward_bias)  # (n, E)
    decay = env.position_decay ** np.arange(env.len_list)
    q = decay[None, :, None] * base[:, None, :]
    return q[0] if single else q


def expected_reward(context: np.ndarray, embedding: int, position: int, env: EnvModel) -> float:
    """Expected reward of showing a category-``embedding`` item at ``position``."""
    if not 0 <= embedding < env.n_embeddings:
        raise ConfigurationError(f"embedding {embedding} out of range")
    if not 0 <= position < env.len_list:
        raise ConfigurationError(f"position {position} out of range")
    x, _ = _as_contexts(context, env)
    if x.shape[0] != 1:
        raise ConfigurationError("expected_reward takes a single context")
    logit = x[0] @ env.reward_weights[embedding] + env.reward_bias[embedding]
    return float(env.position_decay**position * expit(logit))


def logging_policy(context: np.ndarray, env: EnvModel) -> np.ndarray:
    """Per-position softmax over ``beta * q_k(x, e_a)``, shape (..., K, |A|)."""
    context, single = _as_contexts(context, env)
    q = expected_reward_table(context, env)
    logits = env.beta * q
    logits = logits - logits.max(axis=-1, keepdims=True)
    unnorm = np.exp(logits)  # per embedding; all actions in a category share it
    counts = np.bincount(env.embedding_map.assignment, minlength=env.n_embeddings)
    norm = unnorm @ counts
    probs = (unnorm / norm[..., None])[..., env.embedding_map.assignment]
    return probs[0] if single else probs


def target_policy(context: np.ndarray, env: EnvModel) -> np.ndarray:
    """Epsilon-greedy over ``q_k(x, e_a)``; ties go to the lowest action index."""
    context, single = _as_contexts(context, env)
    q_actions = expected_reward_table(context, env)[..., env.embedding_map.assignment]
    best = np.argmax(q_actions, axis=-1)  # first maximal index
    probs = np.full(q_actions.shape, env.epsilon / env.n_actions)
    np.put_along_axis(probs, best[..., None], 1.0 - env.epsilon + env.epsilon / env.n_actions, axis=-1)
    return probs[0] if single else probs


def observation_distribution(context: np.ndarray, env: EnvModel) -> np.ndarray:
    """Probability of every observation pattern, shape (..., 2**K).

    Pattern weights are ``|x @ v_o| * alpha**(K - sum(o))`` with ``0**0 == 1``,
    so ``alpha == 0`` puts all mass on the all-observed pattern.
    """
    context, single = _as_contexts(context, env)
    n_obs = observation_patterns(env.len_list).sum(axis=1)
    bias = np.power(float(env.alpha), env.len_list - n_obs)  # numpy: 0.0**0 == 1.0
    weights = np.abs(context @ env.obs_weights.T) * bias
    total = weights.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateInputError("all observation-pattern weights are zero")
    probs = weights / total
    return probs[0] if single else probs


def marginal_observation_prob(dist: np.ndarray, position: int) -> np.ndarray:
    """Probability that ``position`` is observed, summed over patterns.

    ``dist`` has shape (..., 2**K); returns shape (...).
    """
    dist = np.asarray(dist, dtype=float)
    len_list = int(np.log2(dist.shape[-1]))
    if 2**len_list != dist.shape[-1]:
        raise ConfigurationError("distribution length is not a power of two")
    if not 0 <= position < len_list:
        raise ConfigurationError(f"position {position} out of range")
    return dist @ observation_patterns(len_list)[:, position].astype(float)


def observation_marginals(context: np.ndarray, env: EnvModel) -> np.ndarray:
    """``theta(o_k = 1 | x)`` for every position, shape (..., K)."""
    dist = observation_distribution(context, env)
    return dist @ observation_patterns(env.len_list).astype(float)


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None]
    idx = (cdf < u * cdf[..., -1:]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


ContextSampler = Callable[[np.random.Generator, int], np.ndarray]


def sample_dataset(
    env: EnvModel,
    n: int,
    data_seed: int,
    context_sampler: Optional[ContextSampler] = None,
) -> LoggedDataset:
    """Draw ``n`` i.i.d. logged rankings.

    Per record: a context (standard normal unless ``context_sampler`` is
    given), one action per position from the logging policy (with replacement
    across positions), an observation pattern, and normal rewards around
    ``q_k`` revealed only where observed.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = make_rng(env.env_seed, STREAM_DATA, data_seed)
    if context_sampler is None:
        context = rng.standard_normal((n, env.dim_context))
    else:
        context = np.asarray(context_sampler(rng, n), dtype=float).reshape(n, env.dim_context)
    actions = _sample_categorical(logging_policy(context, env), rng)
    embeddings = env.embedding_map.assignment[actions]
    pattern = _sample_categorical(observation_distribution(context, env), rng)
    observed = observation_patterns(env.len_list)[pattern]
    q = np.take_along_axis(expected_reward_table(context, env), embeddings[..., None], axis=-1)[..., 0]
    reward = q + env.reward_noise * rng.standard_normal(q.shape)
    reward = np.where(observed, reward, np.nan)
    return LoggedDataset(
        context=context,
        actions=actions,
        embeddings=embeddings,
        observed=observed,
        reward=reward,
        fingerprint=f"{env.fingerprint()}-data{data_seed}",
    )


@dataclass(frozen=True)
class PolicyValue:
    value: float
    per_position: np.ndarray
    stderr: float
    n_mc: int


def policy_value_on_contexts(
    context: np.ndarray,
    env: EnvModel,
    policy: Optional[Policy] = None,
    chunk_size: int = 2000,
) -> np.ndarray:
    """Per-context, per-position value ``sum_e pi(e | x) q_k(x, e)``, shape (n, K)."""
    policy = env.target_policy if policy is None else policy
    context = np.atleast_2d(np.asarray(context, dtype=float))
    out = np.empty((context.shape[0], env.len_list))
    for start in range(0, context.shape[0], chunk_size):
        x = context[start : start + chunk_size]
        marg = marginal_embedding_probs(policy(x), env.embedding_map)
        out[start : start + chunk_size] = np.sum(marg * expected_reward_table(x, env), axis=-1)
    return out


def true_policy_value(
    env: EnvModel,
    n_mc: int = 100_000,
    eval_seed: int = 0,
    policy: Optional[Policy] = None,
) -> PolicyValue:
    """Monte Carlo over fresh contexts of the exact per-context policy value.

    Only contexts are sampled; the expectation over actions and rewards is
    computed analytically through the embedding marginals.
    """
    if n_mc < 1:
        raise ConfigurationError("n_mc must be >= 1")
    rng = make_rng(env.env_seed, STREAM_EVAL, eval_seed)
    context = rng.standard_normal((n_mc, env.dim_context))
    values = policy_value_on_contexts(context, env, policy)
    totals = values.sum(axis=1)
    stderr = float(totals.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("nan")
    return PolicyValue(
        value=float(totals.mean()),
        per_position=values.mean(axis=0),
        stderr=stderr,
        n_mc=n_mc,
    )


def with_alpha(env: EnvModel, alpha: float) -> EnvModel:
    return dataclasses.replace(env, alpha=float(alpha))
