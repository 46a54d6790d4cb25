"""Property suite over tiny enumerable instances, run by ``ope-mnar verify``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .core import ConfigurationError, LoggedDataset
from .env import make_env
from .estimators import (
    PropensityError,
    constant_theta,
    heuristic_theta_provider,
    mips,
    mips_roips,
)
from .oracle import (
    TinyInstance,
    exact_policy_value,
    oracle_expected_value,
    random_tiny_instance,
    theorem_bias,
)

EXACT_TOL = 1e-10
MC_Z = 4.0


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    max_deviation: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"[{status}] {self.name}: max deviation {self.max_deviation:.3e}"
        return f"{text} ({self.detail})" if self.detail else text


def tiny_instances(n_instances: int, seed: int = 0) -> List[TinyInstance]:
    rng = np.random.default_rng(seed)
    return [random_tiny_instance(rng) for _ in range(n_instances)]


def check_proposition(instances: List[TinyInstance]) -> PropertyResult:
    dev = 0.0
    for t in instances:
        dev = max(dev, np.max(np.abs(oracle_expected_value(t, "mips-true-roips") - exact_policy_value(t))))
    return PropertyResult(
        "proposition: mips-true-roips is unbiased", dev <= EXACT_TOL, dev,
        f"{len(instances)} instances, tol {EXACT_TOL:g}",
    )


def check_theorem(instances: List[TinyInstance]) -> PropertyResult:
    dev = 0.0
    for t in instances:
        enumerated = exact_policy_value(t) - oracle_expected_value(t, "mips")
        dev = max(dev, np.max(np.abs(enumerated - theorem_bias(t))))
    return PropertyResult(
        "theorem: mips bias equals E[q (1 - theta)]", dev <= EXACT_TOL, dev,
        f"{len(instances)} instances, tol {EXACT_TOL:g}",
    )


def check_reduction(instances: List[TinyInstance], n: int = 50) -> PropertyResult:
    """With theta == 1 the reweighted estimator must reproduce mips bit for bit."""
    dev = 0.0
    for i, t in enumerate(instances):
        env = t.env
        d = t.sample_dataset(n, i)
        plain = mips(d, env.target_policy, env.logging_policy, env.embedding_map)
        ones = constant_theta(1.0, env.len_list)
        roips = mips_roips(d, env.target_policy, env.logging_policy, env.embedding_map, ones)
        dev = max(dev, float(np.max(np.abs(plain.per_position - roips.per_position))))
    return PropertyResult("reduction: theta == 1 gives mips exactly", dev == 0.0, dev)


def mc_instance() -> TinyInstance:
    env = make_env(
        dim_context=2, n_actions=3, n_embeddings=2, len_list=2,
        alpha=2.0, beta=2.0, epsilon=0.3, position_decay=0.8, env_seed=7,
    )
    return TinyInstance(
        env=env,
        contexts=np.array([[0.5, -1.0], [1.5, 0.3], [-0.7, 0.9]]),
        context_probs=np.array([0.5, 0.3, 0.2]),
    )


def check_monte_carlo(mc_seeds: int, t: TinyInstance = None) -> PropertyResult:
    """Mean of mips over ``mc_seeds`` one-record datasets vs its exact expectation."""
    if mc_seeds < 2:
        raise ConfigurationError("need at least two Monte Carlo seeds")
    t = mc_instance() if t is None else t
    env = t.env
    draws = np.array([
        mips(t.sample_dataset(1, s), env.target_policy, env.logging_policy, env.embedding_map).per_position
        for s in range(mc_seeds)
    ])
    expected = oracle_expected_value(t, "mips")
    se = draws.std(axis=0, ddof=1) / np.sqrt(mc_seeds)
    z = np.abs(draws.mean(axis=0) - expected) / np.maximum(se, 1e-300)
    return PropertyResult(
        "monte-carlo: mips mean within 4 standard errors of exact expectation",
        bool(np.all(z <= MC_Z)), float(np.max(np.abs(draws.mean(axis=0) - expected))),
        f"{mc_seeds} datasets, max z {np.max(z):.2f}",
    )


def check_heuristic_finite(corrupt: bool = False) -> PropertyResult:
    """Heuristic propensities must stay usable when a position is never observed.

    ``corrupt=True`` removes the ``1 / n`` floor to show the check catches it.
    """
    n = 100
    rng = np.random.default_rng(0)
    observed = np.ones((n, 2), dtype=bool)
    observed[:, 1] = False
    reward = np.where(observed, rng.random((n, 2)), np.nan)
    data = LoggedDataset(
        context=rng.standard_normal((n, 1)),
        actions=np.zeros((n, 2), dtype=np.int64),
        embeddings=np.zeros((n, 2), dtype=np.int64),
        observed=observed,
        reward=reward,
    )
    env = make_env(dim_context=1, n_actions=2, n_embeddings=1, len_list=2, env_seed=3)
    data = data.with_rewards(reward)
    name = "heuristic-roips: finite with an all-unobserved position"
    try:
        theta = heuristic_theta_provider(data, floor=not corrupt)
        est = mips_roips(data, env.target_policy, env.logging_policy, env.embedding_map, theta)
    except PropensityError as exc:
        return PropertyResult(name, False, float("inf"), f"propensity error: {exc}")
    finite = bool(np.all(np.isfinite(est.per_position)))
    return PropertyResult(name, finite, 0.0 if finite else float("inf"))


def run_verification(
    n_instances: int = 100, mc_seeds: int = 10_000, seed: int = 0, corrupt: bool = False
) -> List[PropertyResult]:
    if n_instances < 1:
        raise ConfigurationError("need at least one instance")
    instances = tiny_instances(n_instances, seed)
    return [
        check_proposition(instances),
        check_theorem(instances),
        check_reduction(instances),
        check_monte_carlo(mc_seeds),
        check_heuristic_finite(corrupt),
    ]
