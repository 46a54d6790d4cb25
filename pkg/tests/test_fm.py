import numpy as np
import pytest

from ope_mnar.core import ConfigurationError, LoggedDataset
from ope_mnar.env import make_env, sample_dataset
from ope_mnar.estimators import ThetaProvider, constant_theta, true_theta
from ope_mnar.fm import (
    FmParams,
    FmTrainConfig,
    TrainingError,
    _sgd_epoch,
    epoch_order,
    featurize,
    fm_gradient,
    fm_objective,
    fm_predict,
    fm_train,
    training_examples,
)


def test_featurize_examples():
    np.testing.assert_array_equal(
        featurize(np.array([0.3, -0.1]), 1, 0, 2, 2), [0.3, -0.1, 0, 1, 1, 0]
    )
    np.testing.assert_array_equal(featurize(np.zeros(2), 0, 1, 2, 2), [0, 0, 1, 0, 0, 1])
    a = featurize(np.array([0.3, -0.1]), 1, 0, 2, 2)
    b = featurize(np.array([0.3, -0.1]), 1, 0, 2, 2)
    assert a.tobytes() == b.tobytes()


def test_featurize_index_errors():
    with pytest.raises(ConfigurationError):
        featurize(np.zeros(2), 2, 0, 2, 2)
    with pytest.raises(ConfigurationError):
        featurize(np.zeros(2), 0, -1, 2, 2)


def test_fm_predict_examples():
    z = np.array([0.4, -1.2, 2.0])
    zero = FmParams(0.0, np.zeros(3), np.zeros((3, 2)))
    assert fm_predict(z, zero) == 0.0
    linear = FmParams(0.5, np.array([1.0, 2.0, -1.0]), np.zeros((3, 2)))
    assert fm_predict(z, linear) == pytest.approx(0.5 + z @ linear.w)
    p = FmParams(1.0, np.array([1.0, 2.0]), np.array([[1.0], [2.0]]))
    assert fm_predict(np.array([1.0, 1.0]), p) == pytest.approx(6.0)


def test_fm_predict_matches_pairwise_sum():
    rng = np.random.default_rng(0)
    p = FmParams(0.3, rng.normal(size=6), rng.normal(size=(6, 3)))
    z = rng.normal(size=6)
    brute = p.w0 + p.w @ z + sum(
        (p.V[j] @ p.V[l]) * z[j] * z[l] for j in range(6) for l in range(j + 1, 6)
    )
    assert fm_predict(z, p) == pytest.approx(brute, rel=1e-12)


def random_problem(rng, n=15, p=5, rank=3):
    params = FmParams(float(rng.normal()), rng.normal(size=p), rng.normal(scale=0.5, size=(p, rank)))
    Z = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    weight = 1.0 / rng.uniform(0.05, 1.0, size=n)
    return params, Z, y, weight


def fd_gradient(params, Z, y, weight, l2, step=1e-5):
    def f(w0, w, V):
        return fm_objective(FmParams(w0, w, V), Z, y, weight, l2)

    g0 = (f(params.w0 + step, params.w, params.V) - f(params.w0 - step, params.w, params.V)) / (2 * step)
    gw = np.zeros_like(params.w)
    for j in range(params.w.size):
        e = np.zeros_like(params.w)
        e[j] = step
        gw[j] = (f(params.w0, params.w + e, params.V) - f(params.w0, params.w - e, params.V)) / (2 * step)
    gV = np.zeros_like(params.V)
    for idx in np.ndindex(params.V.shape):
        e = np.zeros_like(params.V)
        e[idx] = step
        gV[idx] = (f(params.w0, params.w, params.V + e) - f(params.w0, params.w, params.V - e)) / (2 * step)
    return FmParams(g0, gw, gV)


def relative_error(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    params, Z, y, weight = random_problem(np.random.default_rng(seed))
    analytic = fm_gradient(params, Z, y, weight, l2=0.1)
    numeric = fd_gradient(params, Z, y, weight, l2=0.1)
    assert relative_error(analytic.w0, numeric.w0) <= 1e-4
    assert relative_error(analytic.w, numeric.w) <= 1e-4
    assert relative_error(analytic.V, numeric.V) <= 1e-4


def test_sgd_kernel_step_matches_gradient():
    rng = np.random.default_rng(3)
    params, Z, y, _ = random_problem(rng, n=1)
    l2, lr, total = 0.2, 0.01, 4.0
    grad = fm_gradient(params, Z, y, np.ones(1), l2 / total)
    w0, w, V = np.array([params.w0]), params.w.copy(), params.V.copy()
    _sgd_epoch(Z, y, np.array([0]), w0, w, V, lr, l2 / total)
    assert w0[0] == pytest.approx(params.w0 - lr * grad.w0, abs=1e-13)
    np.testing.assert_allclose(w, params.w - lr * grad.w, atol=1e-13)
    np.testing.assert_allclose(V, params.V - lr * grad.V, atol=1e-13)


def test_epoch_order_equal_weights_is_permutation():
    order = epoch_order(np.ones(50), np.random.default_rng(0))
    assert sorted(order) == list(range(50))


def test_epoch_order_proportional_to_weights():
    weight = np.array([1.0, 3.0, 4.0, 2.0])
    counts = np.bincount(epoch_order(np.repeat(weight, 250), np.random.default_rng(1)) // 250, minlength=4)
    np.testing.assert_array_equal(counts, 1000 * weight / weight.sum())


@pytest.fixture(scope="module")
def alpha1_data():
    env = make_env(alpha=1.0)
    return env, sample_dataset(env, 1000, 0)


def test_training_descends(alpha1_data):
    env, data = alpha1_data
    model = fm_train(data, true_theta(env), FmTrainConfig(seed=0), env.n_embeddings)
    assert len(model.loss_trace) == 51
    assert model.loss_trace[-1] < model.loss_trace[0]
    assert model.params.is_finite()


def test_training_deterministic(alpha1_data):
    env, data = alpha1_data
    cfg = FmTrainConfig(epochs=5, seed=3)
    a = fm_train(data, true_theta(env), cfg, env.n_embeddings)
    b = fm_train(data, true_theta(env), cfg, env.n_embeddings)
    assert a.params.w.tobytes() == b.params.w.tobytes()
    assert a.params.V.tobytes() == b.params.V.tobytes()
    assert a.loss_trace == b.loss_trace


def test_unit_theta_gives_unweighted_objective(alpha1_data):
    env, data = alpha1_data
    Z, y, weight = training_examples(data, constant_theta(1.0, env.len_list), env.n_embeddings)
    assert np.all(weight == 1.0)
    params = FmParams(0.1, np.full(Z.shape[1], 0.05), np.full((Z.shape[1], 2), 0.01))
    assert fm_objective(params, Z, y, weight, 0.0) == np.sum((y - fm_predict(Z, params)) ** 2)


def test_recovers_linear_target():
    rng = np.random.default_rng(7)
    n, K, E = 400, 2, 3
    context = rng.normal(size=(n, 2))
    embeddings = rng.integers(E, size=(n, K))
    observed = rng.random((n, K)) < 0.7
    coef = np.array([0.5, -0.3, 0.2, 0.0, -0.4, 0.1, 0.3])
    z = featurize(context[:, None, :], embeddings, np.arange(K)[None, :], E, K)
    reward = 0.25 + z @ coef
    data = LoggedDataset(context, embeddings, embeddings, observed, np.where(observed, reward, np.nan))
    provider = ThetaProvider("custom", lambda x: np.tile([0.7, 0.4], (x.shape[0], 1)))
    model = fm_train(data, provider, FmTrainConfig(l2=0.0, seed=1), E)
    assert model.loss_trace[-1] <= 1e-3


def test_no_observations_is_an_error():
    data = LoggedDataset(np.zeros((3, 1)), np.zeros((3, 2), int), np.zeros((3, 2), int),
                         np.zeros((3, 2), bool), np.full((3, 2), np.nan))
    with pytest.raises(TrainingError):
        fm_train(data, constant_theta(1.0, 2), FmTrainConfig(epochs=1), 1)


def test_reward_table_shape(alpha1_data):
    env, data = alpha1_data
    model = fm_train(data, true_theta(env), FmTrainConfig(epochs=2), env.n_embeddings)
    table = model.reward_table(data.context[:7])
    assert table.shape == (7, env.len_list, env.n_embeddings)
    assert table[3, 1, 2] == pytest.approx(model.predict(data.context[3], 2, 1))
