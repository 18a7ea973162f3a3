import numpy as np
import pytest

from bootstab.data import Dataset, SimConfig, simulate_dataset, split
from bootstab.model import PenaltyContext, clamp_probs, forward_batch
from bootstab.training import (
    EnsembleModel,
    TrainConfig,
    bce_loss,
    build_pool,
    load_pool,
    log_pred_distance,
    save_pool,
    stability_penalty,
    train_ensemble,
    train_model,
    train_stable,
    train_standard,
)
from bootstab.model import Architecture, ModelParams


def _sim(n=600, seed=0):
    ds = simulate_dataset(SimConfig(n=n, seed=seed))
    return split(ds, 0.25, seed=seed + 1)


def _quick_cfg(**over):
    base = dict(lam=0.1, pool_size=6, subsample_size=3, epochs=8, seed=123)
    base.update(over)
    return TrainConfig(**base)


def test_bce_uniform_predictor():
    assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2), abs=1e-9)


def test_bce_perfect_fit_bounded_by_clamp():
    y = np.array([1.0, 0.0, 1.0])
    assert bce_loss(y, y) <= 1.1 * -np.log(1 - 1e-7)


def test_bce_matches_loop_oracle():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.integers(0, 2, 50).astype(float)
    total = 0.0
    for pi, yi in zip(p, y):
        total += -(yi * np.log(pi) + (1 - yi) * np.log(1 - pi))
    assert bce_loss(p, y) == pytest.approx(total / 50, abs=1e-12)


def test_bce_length_mismatch():
    with pytest.raises(ValueError):
        bce_loss([0.5], [1, 0])


def test_log_pred_distance():
    assert log_pred_distance(np.log(0.3), np.log(0.3)) == 0.0
    assert log_pred_distance(np.log(0.9), np.log(0.45)) == pytest.approx(np.log(2), abs=1e-12)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=100), rng.normal(size=100)
    assert np.array_equal(log_pred_distance(a, b), log_pred_distance(b, a))


def test_stability_penalty_zero_lambda():
    ctx = PenaltyContext(log_preds=np.log(np.full((3, 4), 0.3)), member_ids=(0, 1, 2), lam=0.0)
    assert stability_penalty(ctx, np.log(np.full(4, 0.7))) == 0.0


def test_stability_penalty_zero_diversity():
    logs = np.log(np.full((3, 4), 0.42))
    ctx = PenaltyContext(log_preds=logs, member_ids=(0, 1, 2), lam=2.0)
    assert stability_penalty(ctx, logs[0]) == 0.0


def test_stability_penalty_hand_case():
    # two members at log 0.2 / log 0.8, target log 0.4: mean distance is log 2
    lam = 0.7
    ctx = PenaltyContext(
        log_preds=np.array([[np.log(0.2)], [np.log(0.8)]]), member_ids=(0, 1), lam=lam
    )
    expected = lam * 0.5 * (abs(np.log(0.2) - np.log(0.4)) + abs(np.log(0.8) - np.log(0.4)))
    got = stability_penalty(ctx, np.array([np.log(0.4)]))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(lam * np.log(2), abs=1e-12)


def test_stability_penalty_misaligned():
    ctx = PenaltyContext(log_preds=np.log(np.full((2, 3), 0.5)), member_ids=(0, 1), lam=1.0)
    with pytest.raises(ValueError, match="misaligned"):
        stability_penalty(ctx, np.zeros(5))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(pool_size=10, subsample_size=11)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    cfg = TrainConfig.from_dict({"lambda": 0.5, "hidden_dims": [8, 4]})
    assert cfg.lam == 0.5
    assert cfg.hidden_dims == (8, 4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_build_pool_deterministic_and_cache_consistent():
    train, _ = _sim(seed=5)
    cfg = _quick_cfg()
    pool_a = build_pool(train, cfg)
    pool_b = build_pool(train, cfg)
    for ma, mb in zip(pool_a.members, pool_b.members):
        assert np.array_equal(ma.to_flat(), mb.to_flat())
    assert np.array_equal(pool_a.cached_logp, pool_b.cached_logp)
    # cache rows reproduce clamped log predictions on the original rows
    for m in range(pool_a.size):
        logp = np.log(clamp_probs(forward_batch(pool_a.members[m], train.features)))
        assert np.abs(logp - pool_a.cached_logp[m]).max() < 1e-12
    assert pool_a.cached_logp.max() <= np.log(1 - 1e-7)
    assert pool_a.cached_logp.min() >= np.log(1e-7)


def test_build_pool_workers_scheduling_invariant():
    train, _ = _sim(n=300, seed=6)
    cfg = _quick_cfg(pool_size=4, epochs=4)
    seq = build_pool(train, cfg, workers=1)
    par = build_pool(train, cfg, workers=2)
    for ma, mb in zip(seq.members, par.members):
        assert np.array_equal(ma.to_flat(), mb.to_flat())
    assert np.array_equal(seq.cached_logp, par.cached_logp)


def test_build_pool_separable_sanity():
    # one-member pool on separable data orders log-predictions with labels
    rng = np.random.default_rng(7)
    x = np.r_[rng.normal(-2.0, 0.4, 60), rng.normal(2.0, 0.4, 60)]
    ds = Dataset(
        features=x.reshape(-1, 1),
        labels=np.r_[np.zeros(60, dtype=int), np.ones(60, dtype=int)],
        feature_names=("x",),
    )
    pool = build_pool(ds, _quick_cfg(pool_size=1, subsample_size=1, epochs=30))
    logp = pool.cached_logp[0]
    assert logp[ds.labels == 1].mean() > logp[ds.labels == 0].mean()


def test_pool_member_diversity():
    train, _ = _sim(n=500, seed=8)
    pool = build_pool(train, _quick_cfg(pool_size=12, subsample_size=6))
    probs = np.column_stack([forward_batch(m, train.features) for m in pool.members])
    frac_spread = (probs.std(axis=1) > 0).mean()
    assert frac_spread > 0.99


def test_train_standard_auc_and_lambda_ignored():
    train, test = _sim(n=900, seed=9)
    cfg_a = _quick_cfg(lam=5.0, epochs=12)
    cfg_b = _quick_cfg(lam=0.0, epochs=12)
    model_a = train_standard(train, cfg_a)
    model_b = train_standard(train, cfg_b)
    assert np.array_equal(model_a.to_flat(), model_b.to_flat())  # lambda has no effect

    from bootstab.evaluate import auc

    preds = forward_batch(model_a, test.features)
    assert auc(preds, test.labels) > 0.85


def test_train_standard_constant_labels_warns_and_hits_base_rate():
    rng = np.random.default_rng(10)
    ds = Dataset(
        features=rng.normal(size=(200, 3)),
        labels=np.ones(200, dtype=int),
        feature_names=("a", "b", "c"),
    )
    with pytest.warns(UserWarning, match="single class"):
        model = train_standard(ds, _quick_cfg(epochs=80))
    assert abs(forward_batch(model, ds.features).mean() - 1.0) < 0.05


def test_lambda_zero_reduction_bit_identical():
    train, _ = _sim(n=500, seed=11)
    cfg = _quick_cfg(lam=0.0)
    pool = build_pool(train, cfg)
    standard = train_standard(train, cfg)
    stable = train_stable(train, pool, cfg)
    assert np.array_equal(standard.to_flat(), stable.to_flat())


def test_train_stable_moves_toward_cached_predictions():
    train, _ = _sim(n=500, seed=12)
    cfg = _quick_cfg(lam=1.0, pool_size=10, subsample_size=5, epochs=12)
    pool = build_pool(train, cfg)
    standard = train_standard(train, cfg)
    stable = train_stable(train, pool, cfg)
    cache_med = np.median(pool.cached_logp, axis=0)
    d_std = np.abs(np.log(clamp_probs(forward_batch(standard, train.features))) - cache_med).mean()
    d_stb = np.abs(np.log(clamp_probs(forward_batch(stable, train.features))) - cache_med).mean()
    assert d_stb < d_std


def test_train_stable_validation_errors():
    train, test = _sim(n=400, seed=13)
    cfg = _quick_cfg(pool_size=3, subsample_size=2, epochs=3)
    pool = build_pool(train, cfg)
    with pytest.raises(ValueError, match="rows"):
        train_stable(test, pool, cfg)  # pool built on different rows
    bad = TrainConfig(lam=0.1, pool_size=8, subsample_size=8, epochs=3, seed=123)
    with pytest.raises(ValueError, match="exceeds pool size"):
        train_stable(train, pool, bad)


def test_objective_decreases_over_training():
    train, _ = _sim(n=500, seed=14)
    cfg = _quick_cfg(lam=0.1, epochs=10)
    pool = build_pool(train, cfg)
    y = train.labels.astype(float)
    _, first_std, last_std = train_model(train.features, y, cfg, seed_root=1, lam=0.0)
    assert last_std < first_std
    cache_t = np.ascontiguousarray(pool.cached_logp.T)
    _, first_stb, last_stb = train_model(
        train.features, y, cfg, seed_root=1, cached_logp_t=cache_t, lam=cfg.lam
    )
    assert last_stb < first_stb


def test_train_ensemble_single_member_and_mean():
    train, _ = _sim(n=300, seed=15)
    pool = build_pool(train, _quick_cfg(pool_size=1, subsample_size=1, epochs=3))
    ens = train_ensemble(pool)
    member_preds = forward_batch(pool.members[0], train.features)
    assert np.abs(ens.predict(train.features) - member_preds).max() < 1e-12


def test_ensemble_mean_of_two_fixed_models():
    # bias-only single-layer models pinned at p = 0.2 and p = 0.6
    arch = Architecture(input_dim=1, hidden_dims=())
    def fixed(p):
        logit = np.log(p / (1 - p))
        return ModelParams(arch=arch, weights=(np.zeros((1, 1)),), biases=(np.array([logit]),))
    ens = EnsembleModel(members=(fixed(0.2), fixed(0.6)))
    assert ens.predict(np.array([[3.7]]))[0] == pytest.approx(0.4, abs=1e-12)


def test_ensemble_empty_pool_rejected():
    with pytest.raises(ValueError, match="empty"):
        EnsembleModel(members=())


def test_grad_loss_objective_decomposes_into_bce_plus_penalty():
    from bootstab.model import ModelParams as MP
    from bootstab.model import forward_logit_batch, grad_loss

    rng = np.random.default_rng(16)
    arch = Architecture(input_dim=3, hidden_dims=(4,))
    params = MP.from_flat(arch, rng.normal(0, 0.5, arch.n_params))
    X = rng.standard_normal((10, 3))
    y = rng.integers(0, 2, 10).astype(float)
    ctx = PenaltyContext(
        log_preds=np.log(rng.uniform(0.1, 0.9, (5, 10))), member_ids=tuple(range(5)), lam=0.3
    )
    loss, _ = grad_loss(params, (X, y), ctx)
    z = forward_logit_batch(params, X)
    p = 1 / (1 + np.exp(-z))
    bce = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    pen = stability_penalty(ctx, np.log(clamp_probs(p)))
    assert loss == pytest.approx(bce + pen, abs=1e-12)


def test_pool_round_trip(tmp_path):
    train, _ = _sim(n=300, seed=17)
    cfg = _quick_cfg(pool_size=3, subsample_size=2, epochs=3)
    pool = build_pool(train, cfg)
    save_pool(pool, tmp_path / "pool", config=cfg)
    again = load_pool(tmp_path / "pool")
    assert again.size == pool.size
    for ma, mb in zip(pool.members, again.members):
        assert np.array_equal(ma.to_flat(), mb.to_flat())
    assert np.array_equal(pool.cached_logp, again.cached_logp)
    assert pool.member_seeds == again.member_seeds
    for ia, ib in zip(pool.indices, again.indices):
        assert np.array_equal(ia.indices, ib.indices)
