"""The three model-construction procedures: standard, stable, and ensemble.

The stable model minimises the penalised objective

    mean BCE(batch) + lambda * mean_i [ (1/M_sub) sum_m |log f_bm(x_i) - log f(x_i)| ]

where the log f_bm terms come from a pre-computed pool of models fitted to
bootstrap resamples of the training data. Each optimiser iteration (one
mini-batch step) draws a fresh without-replacement subsample of M_sub pool
members; pool members are never re-trained or re-evaluated during stable
training. With lambda = 0 the procedure reduces bit-identically to standard
training under shared seeds.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .data import BootstrapIndex, Dataset, draw_bootstrap
from .model import (
    CLAMP_EPS,
    Architecture,
    ModelParams,
    PenaltyContext,
    clamp_probs,
    forward_batch,
    init_params,
    load_model,
    model_to_dict,
)
from .rng import child_seed, make_rng


class TrainingError(RuntimeError):
    """Raised when an optimisation run produces a non-finite objective."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for all three procedures.

    ``lam`` is the stability penalty weight (JSON/CLI name: lambda). The pool
    holds ``pool_size`` pre-computed bootstrap models of which
    ``subsample_size`` are drawn per optimiser iteration.
    """

    lam: float = 0.1
    pool_size: int = 200
    subsample_size: int = 100
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clamp_eps: float = CLAMP_EPS
    hidden_dims: tuple[int, ...] = (64, 32)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.subsample_size <= self.pool_size:
            raise ValueError(
                f"need 0 <= subsample_size <= pool_size, got "
                f"{self.subsample_size} / {self.pool_size}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "pool_size": self.pool_size,
            "subsample_size": self.subsample_size,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "clamp_eps": self.clamp_eps,
            "hidden_dims": list(self.hidden_dims),
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


@dataclass(frozen=True)
class BootstrapPool:
    """Pre-computed bootstrap models with their cached log-predictions.

    ``cached_logp`` is (pool_size, n_train): clamped log predictions of every
    member on the ORIGINAL training rows, in member order.
    """

    members: tuple[ModelParams, ...]
    indices: tuple[BootstrapIndex, ...]
    cached_logp: np.ndarray
    member_seeds: tuple[int, ...]

    def __post_init__(self):
        cached = np.ascontiguousarray(np.asarray(self.cached_logp, dtype=np.float64))
        cached.setflags(write=False)
        object.__setattr__(self, "cached_logp", cached)
        if cached.shape[0] != len(self.members):
            raise ValueError("cached_logp rows must match member count")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def n_train(self) -> int:
        return self.cached_logp.shape[1]


@dataclass(frozen=True)
class EnsembleModel:
    """Bagged model: arithmetic mean of member probabilities."""

    members: tuple[ModelParams, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty pool")

    def predict(self, X) -> np.ndarray:
        total = None
        for member in self.members:
            p = forward_batch(member, X)
            total = p if total is None else total + p
        return total / len(self.members)


def bce_loss(p, y) -> float:
    """Mean binary cross-entropy of probabilities against {0,1} labels."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    pc = clamp_probs(p)
    return float(np.mean(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))))


def log_pred_distance(logp_b, logp):
    """Absolute difference of log prediction probabilities."""
    return np.abs(np.asarray(logp_b) - np.asarray(logp))


def stability_penalty(ctx: PenaltyContext, logp_target) -> float:
    """lambda times the batch mean of member-mean |cached log - target log|."""
    logp_target = np.asarray(logp_target, dtype=np.float64).ravel()
    if ctx.log_preds.shape[1] != logp_target.shape[0]:
        raise ValueError(
            f"misaligned context: {ctx.log_preds.shape[1]} columns "
            f"vs {logp_target.shape[0]} batch rows"
        )
    if ctx.lam == 0.0:
        return 0.0
    per_row = np.abs(ctx.log_preds - logp_target[None, :]).mean(axis=0)
    return float(ctx.lam * per_row.mean())


def _epoch_perms(n: int, epochs: int, seed: int) -> np.ndarray:
    rng = make_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def _subsample_draws(pool_size: int, m_sub: int, n_steps: int, seed: int) -> np.ndarray:
    # one without-replacement draw of m_sub member ids per optimiser step
    rng = make_rng(seed)
    keys = rng.random((n_steps, pool_size))
    return np.argsort(keys, axis=1)[:, :m_sub].astype(np.int64)


def train_model(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    seed_root: int,
    cached_logp_t: np.ndarray | None = None,
    lam: float = 0.0,
) -> tuple[ModelParams, float, float]:
    """Mini-batch Adam on the (optionally penalised) objective.

    Returns (params, first-epoch mean objective, last-epoch mean objective).
    ``cached_logp_t`` is the pool cache transposed to (n_train, pool_size);
    randomness comes from the "init"/"shuffle"/"subsample" children of
    ``seed_root``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    arch = Architecture(input_dim=X.shape[1], hidden_dims=cfg.hidden_dims)
    flat0 = init_params(arch, child_seed(seed_root, "init")).to_flat()
    perms = _epoch_perms(n, cfg.epochs, child_seed(seed_root, "shuffle"))

    subsamples = None
    use_penalty = lam > 0.0 and cached_logp_t is not None
    if use_penalty:
        steps = cfg.epochs * (-(-n // cfg.batch_size))
        subsamples = _subsample_draws(
            cached_logp_t.shape[1], cfg.subsample_size, steps, child_seed(seed_root, "subsample")
        )

    try:
        flat, first_loss, last_loss = backend.kernel.train_loop(
            flat0,
            np.asarray(arch.dims, dtype=np.int64),
            X,
            y,
            float(lam) if use_penalty else 0.0,
            cached_logp_t if use_penalty else None,
            perms,
            subsamples,
            cfg.batch_size,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            cfg.clamp_eps,
        )
    except FloatingPointError as exc:
        raise TrainingError(f"training diverged (seed {seed_root}): {exc}") from exc
    return ModelParams.from_flat(arch, flat), float(first_loss), float(last_loss)


def _check_classes(train: Dataset, what: str) -> None:
    if len(np.unique(train.labels)) < 2:
        warnings.warn(f"{what}: training labels contain a single class", stacklevel=3)


def _member_seed(cfg_seed: int, m: int) -> int:
    return child_seed(cfg_seed, "pool", m)


_POOL_CTX = None  # (X, y, cfg) shared with worker processes via initializer


def _pool_init(X, y, cfg) -> None:
    global _POOL_CTX
    _POOL_CTX = (X, y, cfg)


def _fit_member(m: int) -> tuple[int, np.ndarray, np.ndarray, int]:
    X, y, cfg = _POOL_CTX
    seed_root = _member_seed(cfg.seed, m)
    boot_seed = child_seed(seed_root, "bootstrap")
    idx = make_rng(boot_seed).integers(0, X.shape[0], size=X.shape[0])
    try:
        params, _, _ = train_model(X[idx], y[idx], cfg, seed_root, lam=0.0)
    except TrainingError as exc:
        raise TrainingError(f"pool member {m}: {exc}") from exc
    logp = np.log(clamp_probs(forward_batch(params, X), cfg.clamp_eps))
    return m, params.to_flat(), logp, boot_seed


def build_pool(train: Dataset, cfg: TrainConfig, workers: int | None = None) -> BootstrapPool:
    """Fit ``cfg.pool_size`` standard models to bootstrap resamples.

    Member m resamples with the "bootstrap" child of its member seed, trains
    with a fresh init seed, and caches clamped log-predictions on the
    original training rows. Members are seed-isolated, so results do not
    depend on worker scheduling.
    """
    if cfg.pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    X, y = train.features, train.labels.astype(np.float64)
    workers = cfg.workers if workers is None else workers

    if workers > 1 and cfg.pool_size > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(X, y, cfg)
        ) as pool:
            results = list(pool.map(_fit_member, range(cfg.pool_size)))
    else:
        _pool_init(X, y, cfg)
        results = [_fit_member(m) for m in range(cfg.pool_size)]
    results.sort(key=lambda r: r[0])

    arch = Architecture(input_dim=train.p, hidden_dims=cfg.hidden_dims)
    members, indices, cache_rows, seeds = [], [], [], []
    for m, flat, logp, boot_seed in results:
        members.append(ModelParams.from_flat(arch, flat))
        indices.append(draw_bootstrap(train, boot_seed))
        cache_rows.append(logp)
        seeds.append(_member_seed(cfg.seed, m))
    return BootstrapPool(
        members=tuple(members),
        indices=tuple(indices),
        cached_logp=np.vstack(cache_rows),
        member_seeds=tuple(seeds),
    )


def train_standard(train: Dataset, cfg: TrainConfig) -> ModelParams:
    """Conventional model: minimise BCE once on the training data.

    ``cfg.lam`` is ignored here by contract; the output matches
    ``train_stable`` with lambda = 0 bit for bit under the same seed.
    """
    _check_classes(train, "train_standard")
    params, _, _ = train_model(
        train.features, train.labels.astype(np.float64), cfg, child_seed(cfg.seed, "target"), lam=0.0
    )
    return params


def train_stable(train: Dataset, pool: BootstrapPool, cfg: TrainConfig) -> ModelParams:
    """Single model minimising the bootstrap-stability penalised objective."""
    if pool.n_train != train.n:
        raise ValueError(
            f"pool was built on {pool.n_train} rows but train has {train.n}"
        )
    if cfg.subsample_size > pool.size:
        raise ValueError(
            f"subsample_size {cfg.subsample_size} exceeds pool size {pool.size}"
        )
    _check_classes(train, "train_stable")
    cache_t = np.ascontiguousarray(pool.cached_logp.T) if cfg.lam > 0 else None
    params, _, _ = train_model(
        train.features,
        train.labels.astype(np.float64),
        cfg,
        child_seed(cfg.seed, "target"),
        cached_logp_t=cache_t,
        lam=cfg.lam,
    )
    return params


def train_ensemble(pool: BootstrapPool) -> EnsembleModel:
    """Wrap the pool with mean-probability aggregation; no extra training."""
    return EnsembleModel(members=pool.members)


POOL_MANIFEST = "pool.json"
POOL_CACHE = "cache.npy"


def save_pool(pool: BootstrapPool, directory, *, config: TrainConfig | None = None) -> None:
    """Directory layout: member_###.json models, cache.npy, pool.json manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    member_files = []
    for m, params in enumerate(pool.members):
        name = f"member_{m:03d}.json"
        doc = model_to_dict(
            params,
            provenance={"member": m, "seed": pool.member_seeds[m], "bootstrap_seed": pool.indices[m].seed},
        )
        with open(directory / name, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, separators=(",", ":"))
            fh.write("\n")
        member_files.append(name)
    np.save(directory / POOL_CACHE, pool.cached_logp)
    manifest = {
        "schema_version": 1,
        "size": pool.size,
        "n_train": pool.n_train,
        "members": member_files,
        "member_seeds": list(pool.member_seeds),
        # index vectors re-derive from their seeds, so only seeds are stored
        "bootstrap_seeds": [bi.seed for bi in pool.indices],
        "train_config": config.to_dict() if config else None,
    }
    with open(directory / POOL_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")


def load_pool(directory) -> BootstrapPool:
    directory = Path(directory)
    with open(directory / POOL_MANIFEST, encoding="utf-8") as fh:
        manifest = json.load(fh)
    members = []
    for name in manifest["members"]:
        params, _ = load_model(directory / name)
        members.append(params)
    cached = np.load(directory / POOL_CACHE)
    n_train = int(manifest["n_train"])
    indices = tuple(
        BootstrapIndex(indices=make_rng(seed).integers(0, n_train, size=n_train), seed=seed)
        for seed in manifest["bootstrap_seeds"]
    )
    return BootstrapPool(
        members=tuple(members),
        indices=indices,
        cached_logp=cached,
        member_seeds=tuple(manifest["member_seeds"]),
    )
