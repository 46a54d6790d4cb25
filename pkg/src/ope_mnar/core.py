"""Shared domain types: contexts, rankings, observation masks and logged data.

Logged data is stored column-wise (one array per field) because every
estimator consumes it vectorized; ``LoggedDataset[i]`` materializes a single
:class:`LoggedRecord` when row access is wanted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

PROB_ATOL = 1e-9


class ConfigurationError(ValueError):
    """Raised for inconsistent shapes, indices or parameters."""


@dataclass(frozen=True)
class EmbeddingMap:
    """Deterministic action -> embedding (category) assignment."""

    assignment: np.ndarray
    n_embeddings: int

    def __post_init__(self) -> None:
        assignment = np.asarray(self.assignment, dtype=np.int64)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ConfigurationError("assignment must be a non-empty 1-D integer array")
        if assignment.min() < 0 or assignment.max() >= self.n_embeddings:
            raise ConfigurationError(
                f"embedding indices must lie in [0, {self.n_embeddings})"
            )
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)

    @property
    def n_actions(self) -> int:
        return self.assignment.size

    def is_surjective(self) -> bool:
        """True when every embedding is carried by at least one action."""
        counts = np.bincount(self.assignment, minlength=self.n_embeddings)
        return bool(np.all(counts > 0))

    def onehot(self) -> np.ndarray:
        """Indicator matrix of shape (n_actions, n_embeddings)."""
        out = np.zeros((self.n_actions, self.n_embeddings))
        out[np.arange(self.n_actions), self.assignment] = 1.0
        return out

    def __getitem__(self, actions):
        return self.assignment[actions]


def random_embedding_map(
    n_actions: int, n_embeddings: int, rng: np.random.Generator
) -> EmbeddingMap:
    """Draw a uniform assignment, redrawing until no category is empty."""
    if n_embeddings < 1 or n_actions < n_embeddings:
        raise ConfigurationError("need n_actions >= n_embeddings >= 1")
    while True:
        emb = EmbeddingMap(rng.integers(n_embeddings, size=n_actions), n_embeddings)
        if emb.is_surjective():
            return emb


def marginal_embedding_probs(probs: np.ndarray, emb: EmbeddingMap) -> np.ndarray:
    """Push an action distribution forward onto the embedding space.

    Parameters
    ----------
    probs: array-like, shape (..., n_actions)
        Probability vector(s) over actions; the last axis must sum to one.

    emb: EmbeddingMap
        Action-to-embedding assignment.

    Returns
    -------
    marginal: ndarray, shape (..., n_embeddings)
        ``marginal[..., e] = sum_a probs[..., a] * 1{emb[a] == e}``.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != emb.n_actions:
        raise ConfigurationError(
            f"distribution has {probs.shape[-1]} actions but map has {emb.n_actions}"
        )
    if not np.allclose(probs.sum(axis=-1), 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ConfigurationError("action distribution does not sum to one")
    return probs @ emb.onehot()


def check_policy_distribution(probs: np.ndarray, n_actions: Optional[int] = None) -> None:
    """Validate an array of per-position action distributions, shape (..., K, |A|)."""
    probs = np.asarray(probs)
    if n_actions is not None and probs.shape[-1] != n_actions:
        raise ConfigurationError("policy has the wrong number of actions")
    if np.any(probs < 0):
        raise ConfigurationError("policy has negative probabilities")
    if not np.allclose(probs.sum(axis=-1), 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ConfigurationError("policy rows do not sum to one")


@dataclass(frozen=True)
class LoggedRecord:
    context: np.ndarray
    actions: np.ndarray
    embeddings: np.ndarray
    observed: np.ndarray
    rewards: List[Optional[float]]


@dataclass(frozen=True)
class LoggedDataset:
    """``n`` logged rankings with partially observed rewards.

    Attributes
    ----------
    context: ndarray, shape (n, d_x)
    actions: ndarray of int, shape (n, K)
    embeddings: ndarray of int, shape (n, K)
    observed: ndarray of bool, shape (n, K)
        Observation mask ``o``; reward ``(i, k)`` is available iff ``observed[i, k]``.
    reward: ndarray, shape (n, K)
        Rewards, NaN where unobserved.
    fingerprint: str
        Identifier of the environment and seed that produced the data.
    """

    context: np.ndarray
    actions: np.ndarray
    embeddings: np.ndarray
    observed: np.ndarray
    reward: np.ndarray
    fingerprint: str = ""

    def __post_init__(self) -> None:
        for name in ("context", "actions", "embeddings", "observed", "reward"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.context.shape[0]

    @property
    def len_list(self) -> int:
        return self.actions.shape[1]

    @property
    def dim_context(self) -> int:
        return self.context.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> LoggedRecord:
        rewards = [
            float(r) if o else None for r, o in zip(self.reward[i], self.observed[i])
        ]
        return LoggedRecord(
            context=self.context[i],
            actions=self.actions[i],
            embeddings=self.embeddings[i],
            observed=self.observed[i],
            rewards=rewards,
        )

    @property
    def records(self) -> List[LoggedRecord]:
        return [self[i] for i in range(self.n)]

    def __iter__(self) -> Iterator[LoggedRecord]:
        return (self[i] for i in range(self.n))

    def observed_rewards(self) -> np.ndarray:
        """Rewards with unobserved entries replaced by zero."""
        return np.where(self.observed, np.nan_to_num(self.reward), 0.0)

    def with_rewards(self, reward: np.ndarray) -> "LoggedDataset":
        reward = np.where(self.observed, reward, np.nan)
        return LoggedDataset(
            self.context, self.actions, self.embeddings, self.observed, reward,
            self.fingerprint,
        )

    @classmethod
    def from_records(cls, records: List[LoggedRecord], fingerprint: str = "") -> "LoggedDataset":
        rewards = np.array(
            [[np.nan if r is None else r for r in rec.rewards] for rec in records],
            dtype=float,
        )
        return cls(
            context=np.array([rec.context for rec in records], dtype=float),
            actions=np.array([rec.actions for rec in records], dtype=np.int64),
            embeddings=np.array([rec.embeddings for rec in records], dtype=np.int64),
            observed=np.array([rec.observed for rec in records], dtype=bool),
            reward=rewards,
            fingerprint=fingerprint,
        )


@dataclass
class ValidationReport:
    violations: List[tuple] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, index: int, rule: str) -> None:
        self.violations.append((index, rule))

    def __bool__(self) -> bool:
        return self.ok


def validate_dataset(
    data: LoggedDataset,
    emb: Optional[EmbeddingMap] = None,
    dim_context: Optional[int] = None,
) -> ValidationReport:
    """Check every record invariant, collecting ``(index, rule)`` violations.

    Shape problems that make per-record checks meaningless are reported at
    index ``-1``.
    """
    report = ValidationReport()
    n = data.context.shape[0]
    if data.context.ndim != 2:
        report.add(-1, "context must be 2-D (n, d_x)")
        return report
    shapes = {data.actions.shape, data.embeddings.shape, data.observed.shape, data.reward.shape}
    if len(shapes) != 1 or data.actions.ndim != 2 or data.actions.shape[0] != n:
        report.add(-1, "actions/embeddings/observed/reward must share shape (n, K)")
        return report
    if dim_context is not None and data.context.shape[1] != dim_context:
        report.add(-1, f"context dimension {data.context.shape[1]} != {dim_context}")

    finite_ctx = np.all(np.isfinite(data.context), axis=1)
    has_reward = ~np.isnan(data.reward)
    reward_mismatch = np.any(has_reward != data.observed.astype(bool), axis=1)
    if emb is not None:
        in_range = np.all((data.actions >= 0) & (data.actions < emb.n_actions), axis=1)
        safe = np.clip(data.actions, 0, emb.n_actions - 1)
        emb_mismatch = np.any(emb.assignment[safe] != data.embeddings, axis=1)
    else:
        in_range = np.ones(n, dtype=bool)
        emb_mismatch = np.zeros(n, dtype=bool)

    for i in range(n):
        if not finite_ctx[i]:
            report.add(i, "context has non-finite entries")
        if not in_range[i]:
            report.add(i, "action index out of range")
        elif emb_mismatch[i]:
            report.add(i, "embeddings inconsistent with embedding map")
        if reward_mismatch[i]:
            report.add(i, "reward presence does not match observation mask")
    return report
