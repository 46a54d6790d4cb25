# %% [markdown]
# # Missing rewards bias marginalized IPS
#
# Build the default synthetic world, turn up the observation bias `alpha`,
# and compare plain MIPS with its reward-observation-weighted variants on a
# single logged dataset.

# %%
import numpy as np

from ope_mnar.env import make_env, observation_marginals, sample_dataset, true_policy_value, with_alpha
from ope_mnar.estimators import heuristic_theta, heuristic_theta_provider, mips, mips_roips, true_theta

env = make_env()  # |A|=500, |E|=5, K=5, d_x=5
truth = true_policy_value(env, n_mc=50_000)
print(f"V(pi) = {truth.value:.4f} +/- {truth.stderr:.4f}")
print("per position:", np.round(truth.per_position, 4))

# %% [markdown]
# How often is each position observed? At `alpha=0` every reward is seen;
# larger `alpha` favours sparse observation patterns.

# %%
x = np.random.default_rng(0).standard_normal((5000, env.dim_context))
for alpha in (0.0, 1.0, 2.0, 3.0):
    theta = observation_marginals(x, with_alpha(env, alpha))
    print(f"alpha={alpha:g}: mean theta(o_k|x) per position {np.round(theta.mean(axis=0), 3)}")

# %% [markdown]
# One dataset of n=1000 at alpha=3.

# %%
env3 = with_alpha(env, 3.0)
data = sample_dataset(env3, n=1000, data_seed=0)
print(f"observed share: {data.observed.mean():.3f}")
print("heuristic theta:", np.round(heuristic_theta(data), 3))

args = (data, env3.target_policy, env3.logging_policy, env3.embedding_map)
for report in (
    mips(*args),
    mips_roips(*args, true_theta(env3)),
    mips_roips(*args, heuristic_theta_provider(data)),
):
    print(f"{report.estimator_name:<22} {report.value:.4f}  (error {report.value - truth.value:+.4f})")
