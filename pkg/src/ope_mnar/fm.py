"""Second-order factorization machine trained with an IPS-weighted squared loss.

Each observed reward ``r_ik`` is one training example with feature vector
``[x_i | onehot(e_ik) | onehot(k)]`` and sample weight ``1 / theta(o_k | x_i)``,
so the weighted loss is an unbiased estimate of the loss over all (observed
and unobserved) entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numba import njit

from .core import ConfigurationError, LoggedDataset
from .estimators import ThetaProvider


class TrainingError(RuntimeError):
    pass


@dataclass
class FmParams:
    w0: float
    w: np.ndarray  # (p,)
    V: np.ndarray  # (p, rank)

    @property
    def n_features(self) -> int:
        return self.w.size

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "FmParams":
        return FmParams(float(self.w0), self.w.copy(), self.V.copy())

    def sq_norm(self) -> float:
        return float(self.w0**2 + self.w @ self.w + np.sum(self.V**2))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.w0) and np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.V)))


@dataclass(frozen=True)
class FmTrainConfig:
    rank: int = 10
    learning_rate: float = 0.01
    epochs: int = 50
    l2: float = 1e-4
    init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rank < 1 or self.epochs < 1:
            raise ConfigurationError("rank and epochs must be >= 1")
        if self.learning_rate <= 0 or self.init_scale <= 0:
            raise ConfigurationError("learning_rate and init_scale must be positive")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be non-negative")


def featurize(context: np.ndarray, embedding, position, n_embeddings: int, len_list: int) -> np.ndarray:
    """Concatenate ``[x | onehot(e, |E|) | onehot(k, K)]``.

    Broadcasts: ``context`` of shape (..., d_x) with integer ``embedding`` and
    ``position`` arrays of shape (...) gives features of shape (..., p).
    """
    context = np.asarray(context, dtype=float)
    embedding = np.asarray(embedding)
    position = np.asarray(position)
    if np.any((embedding < 0) | (embedding >= n_embeddings)):
        raise ConfigurationError("embedding index out of range")
    if np.any((position < 0) | (position >= len_list)):
        raise ConfigurationError("position index out of range")
    shape = np.broadcast_shapes(context.shape[:-1], embedding.shape, position.shape)
    ctx = np.broadcast_to(context, shape + context.shape[-1:])
    return np.concatenate(
        [
            ctx,
            np.eye(n_embeddings)[np.broadcast_to(embedding, shape)],
            np.eye(len_list)[np.broadcast_to(position, shape)],
        ],
        axis=-1,
    )


def fm_predict(z: np.ndarray, params: FmParams) -> np.ndarray:
    """``w0 + w.z + sum_{j<l} <V_j, V_l> z_j z_l`` via the O(p * rank) identity."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.n_features:
        raise ConfigurationError(f"feature length {z.shape[-1]} != {params.n_features}")
    s = z @ params.V
    pair = 0.5 * np.sum(s**2 - (z**2) @ (params.V**2), axis=-1)
    return params.w0 + z @ params.w + pair


def fm_objective(
    params: FmParams, Z: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, l2: float
) -> float:
    """``sum_i sample_weight_i (y_i - f(z_i))**2 + l2 * ||params||**2``."""
    resid = y - fm_predict(Z, params)
    return float(np.sum(sample_weight * resid**2) + l2 * params.sq_norm())


def fm_gradient(
    params: FmParams, Z: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, l2: float
) -> FmParams:
    """Analytic gradient of :func:`fm_objective`, returned in parameter layout."""
    s = Z @ params.V  # (N, rank)
    g = -2.0 * sample_weight * (y - fm_predict(Z, params))  # d loss / d f
    grad_w0 = g.sum() + 2 * l2 * params.w0
    grad_w = Z.T @ g + 2 * l2 * params.w
    # d f / d V_jf = z_j s_f - V_jf z_j^2
    grad_V = Z.T @ (g[:, None] * s) - params.V * ((Z**2).T @ g)[:, None] + 2 * l2 * params.V
    return FmParams(float(grad_w0), grad_w, grad_V)


def epoch_order(sample_weight: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffled visit order with each example repeated in proportion to its weight.

    Systematic resampling: ``N`` evenly spaced draws through the cumulative
    weights, so with equal weights every example is visited exactly once.
    """
    n = sample_weight.size
    cdf = np.cumsum(sample_weight)
    cdf /= cdf[-1]
    ticks = (rng.random() + np.arange(n)) / n
    idx = np.minimum(np.searchsorted(cdf, ticks, side="right"), n - 1)
    return rng.permutation(idx)


@njit(cache=True)
def _sgd_epoch(Z, y, order, w0, w, V, lr, reg):
    # unweighted per-example steps; weighting comes from the visit order.
    # reg = l2 / sum(sample_weight)
    p, rank = V.shape
    s = np.empty(rank)
    for idx in order:
        z = Z[idx]
        pred = w0[0]
        for j in range(p):
            pred += w[j] * z[j]
        for f in range(rank):
            acc = 0.0
            sq = 0.0
            for j in range(p):
                acc += V[j, f] * z[j]
                sq += V[j, f] * V[j, f] * z[j] * z[j]
            s[f] = acc
            pred += 0.5 * (acc * acc - sq)
        g = 2.0 * (pred - y[idx])
        w0[0] -= lr * (g + 2.0 * reg * w0[0])
        for j in range(p):
            zj = z[j]
            w[j] -= lr * (g * zj + 2.0 * reg * w[j])
            for f in range(rank):
                V[j, f] -= lr * (g * (zj * s[f] - V[j, f] * zj * zj) + 2.0 * reg * V[j, f])


@dataclass
class FmModel:
    """Trained reward model; callable as a direct-method reward table."""

    params: FmParams
    n_embeddings: int
    len_list: int
    loss_trace: List[float] = field(default_factory=list)

    def predict(self, context: np.ndarray, embedding, position) -> np.ndarray:
        z = featurize(context, embedding, position, self.n_embeddings, self.len_list)
        return fm_predict(z, self.params)

    def reward_table(self, context: np.ndarray) -> np.ndarray:
        """Predicted reward for every (position, embedding), shape (n, K, |E|)."""
        context = np.atleast_2d(context)
        pos = np.arange(self.len_list)[None, :, None]
        emb = np.arange(self.n_embeddings)[None, None, :]
        return self.predict(context[:, None, None, :], emb, pos)

    __call__ = reward_table


def training_examples(data: LoggedDataset, theta: ThetaProvider, n_embeddings: int):
    """Observed ``(i, k)`` entries as features, targets and IPS sample weights."""
    rows, cols = np.nonzero(data.observed)
    Z = featurize(data.context[rows], data.embeddings[rows, cols], cols, n_embeddings, data.len_list)
    y = data.reward[rows, cols]
    sample_weight = 1.0 / theta(data.context)[rows, cols]
    return Z, y, sample_weight


def init_params(n_features: int, cfg: FmTrainConfig, rng: np.random.Generator) -> FmParams:
    return FmParams(
        w0=float(rng.normal(0.0, cfg.init_scale)),
        w=rng.normal(0.0, cfg.init_scale, n_features),
        V=rng.normal(0.0, cfg.init_scale, (n_features, cfg.rank)),
    )


def fm_train(
    data: LoggedDataset,
    theta: ThetaProvider,
    cfg: Optional[FmTrainConfig] = None,
    n_embeddings: Optional[int] = None,
) -> FmModel:
    """Fit the FM by SGD over shuffled observed entries.

    Minimizes :func:`fm_objective` with sample weights ``1 / theta``. Rather
    than scaling each step by its weight (unstable when some ``theta`` is
    small), every epoch visits examples in proportion to their weights, which
    gives the same expected gradient. The loss trace holds
    ``objective / sum(weights)`` (the weighted mean loss) before training and
    after every epoch.
    """
    cfg = FmTrainConfig() if cfg is None else cfg
    if n_embeddings is None:
        n_embeddings = int(data.embeddings.max()) + 1
    Z, y, sample_weight = training_examples(data, theta, n_embeddings)
    n_obs = y.size
    if n_obs == 0:
        raise TrainingError("dataset has no observed rewards")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(Z.shape[1], cfg, rng)
    w0 = np.array([params.w0])
    total_weight = float(sample_weight.sum())
    reg = cfg.l2 / total_weight

    def loss() -> float:
        current = FmParams(float(w0[0]), params.w, params.V)
        return fm_objective(current, Z, y, sample_weight, cfg.l2) / total_weight

    trace = [loss()]
    for epoch in range(cfg.epochs):
        order = epoch_order(sample_weight, rng)
        _sgd_epoch(Z, y, order, w0, params.w, params.V, cfg.learning_rate, reg)
        trace.append(loss())
        if not np.isfinite(trace[-1]):
            raise TrainingError(f"training diverged at epoch {epoch + 1}")
    params.w0 = float(w0[0])
    return FmModel(params, n_embeddings, data.len_list, trace)
