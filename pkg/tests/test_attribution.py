import numpy as np
import pytest

from bootstab.attribution import (
    AttributionError,
    AttributionMatrix,
    agreement,
    ensemble_spread,
    explain_rows,
    export_attributions_csv,
    export_spread_csv,
    shapley_exact,
    shapley_sample,
)
from bootstab.model import Architecture, ModelParams, forward_batch, init_params


def _mlp_predict(params):
    return lambda X: forward_batch(params, X)


def test_exact_constant_function_is_zero():
    rng = np.random.default_rng(0)
    bg = rng.normal(size=(20, 4))
    phi = shapley_exact(lambda X: np.full(len(X), 0.7), rng.normal(size=4), bg)
    assert np.abs(phi).max() < 1e-12


def test_exact_additive_closed_form():
    # for f(x) = sum w_j x_j the value is w_j (x_j - mean background_j)
    rng = np.random.default_rng(1)
    w = rng.normal(size=5)
    bg = rng.normal(size=(30, 5))
    x = rng.normal(size=5)
    phi = shapley_exact(lambda X: X @ w, x, bg)
    expected = w * (x - bg.mean(axis=0))
    assert np.abs(phi - expected).max() < 1e-9


def test_exact_symmetry_for_duplicate_features():
    rng = np.random.default_rng(2)
    bg = rng.normal(size=(25, 3))
    bg[:, 1] = bg[:, 0]  # exchangeable columns under a symmetric model
    x = np.array([1.3, 1.3, -0.4])
    phi = shapley_exact(lambda X: np.tanh(X[:, 0] + X[:, 1]) + 0.1 * X[:, 2], x, bg)
    assert abs(phi[0] - phi[1]) < 1e-9


def test_exact_efficiency_on_mlp():
    arch = Architecture(input_dim=5, hidden_dims=(6,))
    params = init_params(arch, seed=4)
    rng = np.random.default_rng(3)
    bg = rng.normal(size=(15, 5))
    x = rng.normal(size=5)
    phi = shapley_exact(_mlp_predict(params), x, bg)
    base = forward_batch(params, bg).mean()
    fх = forward_batch(params, x.reshape(1, -1))[0]
    assert base + phi.sum() == pytest.approx(fх, abs=1e-9)


def test_exact_refuses_wide_inputs():
    rng = np.random.default_rng(4)
    with pytest.raises(AttributionError, match="enumeration"):
        shapley_exact(lambda X: X.sum(axis=1), rng.normal(size=16), rng.normal(size=(5, 16)))


def test_sample_constant_function_exact_zeros():
    rng = np.random.default_rng(5)
    bg = rng.normal(size=(10, 4))
    phi = shapley_sample(lambda X: np.full(len(X), 0.3), rng.normal(size=4), bg, 50, seed=1)
    assert np.abs(phi).max() < 1e-12


def test_sample_deterministic_per_seed():
    arch = Architecture(input_dim=4, hidden_dims=(5,))
    params = init_params(arch, seed=6)
    rng = np.random.default_rng(7)
    bg = rng.normal(size=(12, 4))
    x = rng.normal(size=4)
    a = shapley_sample(_mlp_predict(params), x, bg, 40, seed=9)
    b = shapley_sample(_mlp_predict(params), x, bg, 40, seed=9)
    c = shapley_sample(_mlp_predict(params), x, bg, 40, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_efficiency_telescopes():
    arch = Architecture(input_dim=6, hidden_dims=(8, 4))
    params = init_params(arch, seed=8)
    rng = np.random.default_rng(9)
    bg = rng.normal(size=(20, 6))
    x = rng.normal(size=6)
    phi = shapley_sample(_mlp_predict(params), x, bg, 25, seed=2)
    base = forward_batch(params, bg).mean()
    fx = forward_batch(params, x.reshape(1, -1))[0]
    assert base + phi.sum() == pytest.approx(fx, abs=1e-9)


def test_sample_converges_to_exact():
    arch = Architecture(input_dim=5, hidden_dims=(7,))
    params = init_params(arch, seed=10)
    rng = np.random.default_rng(11)
    bg = rng.normal(size=(12, 5))
    x = rng.normal(size=5)
    exact = shapley_exact(_mlp_predict(params), x, bg)
    approx = shapley_sample(_mlp_predict(params), x, bg, 1500, seed=3)
    assert np.abs(approx - exact).max() < 0.01


def test_dummy_feature_gets_zero():
    # weights out of feature 2 zeroed: the model provably ignores it
    arch = Architecture(input_dim=4, hidden_dims=(5,))
    params = init_params(arch, seed=12)
    w0 = params.weights[0].copy()
    w0[:, 2] = 0.0
    params = ModelParams(arch=arch, weights=(w0, params.weights[1]), biases=params.biases)
    rng = np.random.default_rng(13)
    bg = rng.normal(size=(15, 4))
    x = rng.normal(size=4)
    assert abs(shapley_exact(_mlp_predict(params), x, bg)[2]) < 1e-9
    assert abs(shapley_sample(_mlp_predict(params), x, bg, 200, seed=4)[2]) < 1e-9


def test_sampler_error_shrinks_with_more_permutations():
    arch = Architecture(input_dim=4, hidden_dims=(6,))
    params = init_params(arch, seed=14)
    rng = np.random.default_rng(15)
    bg = rng.normal(size=(10, 4))
    x = rng.normal(size=4)
    exact = shapley_exact(_mlp_predict(params), x, bg)

    def rmse(n_perm, reps=60):
        errs = []
        for s in range(reps):
            est = shapley_sample(_mlp_predict(params), x, bg, n_perm, seed=100 + s)
            errs.append(np.mean((est - exact) ** 2))
        return np.sqrt(np.mean(errs))

    ratio = rmse(64) / rmse(16)
    assert 0.35 < ratio < 0.65  # quadrupling permutations roughly halves RMSE


def test_agreement_identity_and_scaling():
    rng = np.random.default_rng(16)
    values = rng.normal(size=(8, 5))
    a = AttributionMatrix(values=values, base_value=0.4, row_ids=np.arange(8), feature_names=tuple("abcde"))
    b = AttributionMatrix(values=2.0 * values, base_value=0.4, row_ids=np.arange(8), feature_names=tuple("abcde"))
    rep = agreement(a, b)
    assert rep.global_rho == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(rep.per_participant_rho, 1.0)
    assert np.allclose(rep.per_feature_rho, 1.0)
    payload = rep.to_dict()
    assert payload["global_rho"] == pytest.approx(1.0)


def test_agreement_shape_mismatch():
    a = AttributionMatrix(values=np.ones((3, 2)), base_value=0.0, row_ids=np.arange(3), feature_names=("a", "b"))
    b = AttributionMatrix(values=np.ones((2, 2)), base_value=0.0, row_ids=np.arange(2), feature_names=("a", "b"))
    with pytest.raises(AttributionError):
        agreement(a, b)


def test_agreement_flags_constant_as_nan():
    values = np.zeros((4, 3))
    a = AttributionMatrix(values=values, base_value=0.0, row_ids=np.arange(4), feature_names=("a", "b", "c"))
    rep = agreement(a, a)
    assert np.isnan(rep.global_rho)
    assert rep.to_dict()["global_rho"] is None


def test_ensemble_spread_identical_members():
    arch = Architecture(input_dim=3, hidden_dims=(4,))
    params = init_params(arch, seed=17)
    rng = np.random.default_rng(18)
    bg = rng.normal(size=(10, 3))
    X = rng.normal(size=(4, 3))
    spread = ensemble_spread(
        [_mlp_predict(params)] * 3, X, bg, ("a", "b", "c"), n_permutations=20, seed=5
    )
    assert np.abs(spread.stds).max() < 1e-12
    assert (spread.rankings == spread.rankings[0]).all()
    assert spread.rank_ranges().max() == 0


def test_ensemble_spread_population_std_convention():
    # two members with per-feature values 0.1 and 0.3 -> std 0.1
    def fn_a(X):
        return 0.1 * X[:, 0] + 0.0 * X[:, 1]

    def fn_b(X):
        return 0.3 * X[:, 0] + 0.0 * X[:, 1]

    bg = np.zeros((4, 2))
    X = np.ones((1, 2))
    spread = ensemble_spread([fn_a, fn_b], X, bg, ("a", "b"), n_permutations=8, seed=6)
    # additive functions: member attributions are exactly 0.1 and 0.3 for feature a
    assert spread.member_values[:, 0, 0] == pytest.approx([0.1, 0.3], abs=1e-12)
    assert spread.stds[0, 0] == pytest.approx(0.1, abs=1e-12)


def test_ensemble_spread_needs_two_members():
    with pytest.raises(AttributionError):
        ensemble_spread([lambda X: X[:, 0]], np.ones((2, 1)), np.zeros((2, 1)), ("a",))


def test_explain_rows_and_exports(tmp_path):
    arch = Architecture(input_dim=3, hidden_dims=(4,))
    params = init_params(arch, seed=19)
    rng = np.random.default_rng(20)
    bg = rng.normal(size=(8, 3))
    X = rng.normal(size=(3, 3))
    attr = explain_rows(_mlp_predict(params), X, bg, ("a", "b", "c"), n_permutations=16, seed=7)
    assert attr.values.shape == (3, 3)
    path = tmp_path / "attr.csv"
    export_attributions_csv(attr, path)
    assert len(path.read_text().strip().splitlines()) == 1 + 9

    spread = ensemble_spread(
        [_mlp_predict(params), _mlp_predict(init_params(arch, seed=21))],
        X, bg, ("a", "b", "c"), n_permutations=8, seed=8,
    )
    values_path, rankings_path = tmp_path / "vals.csv", tmp_path / "ranks.csv"
    export_spread_csv(spread, values_path, rankings_path)
    assert len(values_path.read_text().strip().splitlines()) == 1 + 2 * 3 * 3
    rank_lines = rankings_path.read_text().strip().splitlines()
    assert rank_lines[0] == "member_id,a,b,c"
    assert sorted(int(v) for v in rank_lines[1].split(",")[1:]) == [1, 2, 3]
