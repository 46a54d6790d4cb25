"""Exact expectations on tiny, fully enumerable instances.

A :class:`TinyInstance` has finitely many contexts with known probabilities
and small action/position spaces, so the expectation of an estimator over a
one-record dataset can be computed by summing over every
``(context, action tuple, observation pattern)`` combination. The estimators
are called on each enumerated record; sampled rewards are replaced by their
means, which leaves the expectation unchanged because the estimators are
linear in the rewards.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, EmbeddingMap, LoggedDataset
from .env import (
    EnvModel,
    Policy,
    expected_reward,
    make_env,
    marginal_observation_prob,
    observation_distribution,
    observation_patterns,
    sample_dataset,
)
from .estimators import mips, mips_roips, true_theta

ENUMERATION_BUDGET = 10**6


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class TinyInstance:
    env: EnvModel
    contexts: np.ndarray  # (m, d_x)
    context_probs: np.ndarray  # (m,)

    def __post_init__(self) -> None:
        contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
        probs = np.asarray(self.context_probs, dtype=float)
        if contexts.shape != (probs.size, self.env.dim_context):
            raise ConfigurationError("contexts must have shape (m, d_x) matching context_probs")
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, rtol=0, atol=1e-12):
            raise ConfigurationError("context_probs must be a probability vector")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "context_probs", probs)

    @property
    def n_terms(self) -> int:
        env = self.env
        return self.contexts.shape[0] * env.n_actions**env.len_list * 2**env.len_list

    def check_budget(self, budget: int = ENUMERATION_BUDGET) -> None:
        if self.n_terms > budget:
            raise InstanceTooLargeError(f"{self.n_terms} enumeration terms exceed {budget}")

    def sample_contexts(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.contexts[rng.choice(self.contexts.shape[0], size=n, p=self.context_probs)]

    def sample_dataset(self, n: int, data_seed: int) -> LoggedDataset:
        return sample_dataset(self.env, n, data_seed, context_sampler=self.sample_contexts)


def random_tiny_instance(rng: np.random.Generator) -> TinyInstance:
    """Random instance with |A| <= 4, |E| <= 2, K <= 2 and at most 4 contexts."""
    n_actions = int(rng.integers(1, 5))
    n_embeddings = int(rng.integers(1, min(2, n_actions) + 1))
    len_list = int(rng.integers(1, 3))
    dim_context = int(rng.integers(1, 4))
    env = make_env(
        dim_context=dim_context,
        n_actions=n_actions,
        n_embeddings=n_embeddings,
        len_list=len_list,
        alpha=float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0])),
        beta=float(rng.uniform(0.0, 5.0)),
        epsilon=float(rng.uniform(0.0, 1.0)),
        reward_noise=0.5,
        position_decay=float(rng.uniform(0.3, 1.0)),
        env_seed=int(rng.integers(2**31)),
    )
    m = int(rng.integers(1, 5))
    return TinyInstance(
        env=env,
        contexts=rng.standard_normal((m, dim_context)),
        context_probs=rng.dirichlet(np.ones(m)),
    )


def _single_record(
    x: np.ndarray, actions: tuple, observed: np.ndarray, emb: EmbeddingMap, env: EnvModel
) -> LoggedDataset:
    embeddings = emb.assignment[list(actions)]
    mean_reward = np.array(
        [expected_reward(x, int(e), k, env) for k, e in enumerate(embeddings)]
    )
    return LoggedDataset(
        context=x[None, :],
        actions=np.array([actions]),
        embeddings=embeddings[None, :],
        observed=observed[None, :],
        reward=np.where(observed, mean_reward, np.nan)[None, :],
    )


def oracle_expected_value(
    t: TinyInstance,
    estimator: str,
    target: Optional[Policy] = None,
    logging: Optional[Policy] = None,
) -> np.ndarray:
    """Exact per-position expectation of an estimator on a one-record dataset.

    ``estimator`` is ``"mips"`` or ``"mips-true-roips"``; policies default to
    the instance's own target and logging policies.
    """
    t.check_budget()
    env = t.env
    target = env.target_policy if target is None else target
    logging = env.logging_policy if logging is None else logging
    if estimator == "mips":
        run = lambda d: mips(d, target, logging, env.embedding_map)
    elif estimator == "mips-true-roips":
        theta = true_theta(env)
        run = lambda d: mips_roips(d, target, logging, env.embedding_map, theta)
    else:
        raise ConfigurationError(f"no oracle for estimator {estimator!r}")

    patterns = observation_patterns(env.len_list)
    expectation = np.zeros(env.len_list)
    for x, px in zip(t.contexts, t.context_probs):
        pi0 = logging(x[None, :])[0]  # (K, A)
        obs = observation_distribution(x, env)
        for actions in itertools.product(range(env.n_actions), repeat=env.len_list):
            p_actions = np.prod([pi0[k, a] for k, a in enumerate(actions)])
            if p_actions == 0.0:
                continue
            for pattern, p_obs in zip(patterns, obs):
                if p_obs == 0.0:
                    continue
                record = _single_record(x, actions, pattern, env.embedding_map, env)
                expectation += px * p_actions * p_obs * run(record).per_position
    return expectation


def exact_policy_value(t: TinyInstance, target: Optional[Policy] = None) -> np.ndarray:
    """Per-position value ``E_x sum_a pi(a | x) q_k(x, e_a)``, summed over actions."""
    env = t.env
    target = env.target_policy if target is None else target
    value = np.zeros(env.len_list)
    for x, px in zip(t.contexts, t.context_probs):
        pi = target(x[None, :])[0]
        for k in range(env.len_list):
            for a in range(env.n_actions):
                value[k] += px * pi[k, a] * expected_reward(x, int(env.embedding_map[a]), k, env)
    return value


def theorem_bias(t: TinyInstance, target: Optional[Policy] = None) -> np.ndarray:
    """Closed-form bias of MIPS: ``E_{x, e ~ pi}[q_k(x, e) (1 - theta(o_k | x))]``."""
    t.check_budget()
    env = t.env
    target = env.target_policy if target is None else target
    bias = np.zeros(env.len_list)
    for x, px in zip(t.contexts, t.context_probs):
        pi = target(x[None, :])[0]
        obs = observation_distribution(x, env)
        for k in range(env.len_list):
            miss = 1.0 - marginal_observation_prob(obs, k)
            for e in range(env.n_embeddings):
                p_e = pi[k, env.embedding_map.assignment == e].sum()
                bias[k] += px * p_e * expected_reward(x, e, k, env) * miss
    return bias
