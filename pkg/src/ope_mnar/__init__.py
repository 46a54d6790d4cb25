"""Off-policy evaluation of ranking policies when rewards are missing not at random."""
from .core import (
    ConfigurationError,
    EmbeddingMap,
    LoggedDataset,
    LoggedRecord,
    marginal_embedding_probs,
    validate_dataset,
)
from .env import (
    EnvModel,
    expected_reward,
    logging_policy,
    make_env,
    marginal_observation_prob,
    observation_distribution,
    sample_dataset,
    target_policy,
    true_policy_value,
)
from .estimators import (
    EstimatorReport,
    ThetaProvider,
    dm_value,
    embedding_weight,
    heuristic_theta,
    mips,
    mips_roips,
    true_theta,
)
from .fm import FmTrainConfig, fm_predict, fm_train, featurize
from .harness import SweepConfig, alpha_sweep, mse_decomposition, run_replications
from .oracle import TinyInstance, oracle_expected_value, theorem_bias

__version__ = "0.1.0"
