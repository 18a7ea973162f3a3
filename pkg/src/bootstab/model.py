"""Fixed-architecture MLP for binary risk prediction.

Forward pass, analytic gradients of the penalised objective, and Adam live in
the compiled/numpy kernel pair (see :mod:`bootstab.backend`); this module owns
the parameter structures, the public operations, and JSON serialization.

Hidden layers are rectified; the single output unit applies a logistic link.
The ReLU derivative at exactly 0 is taken as 0, and probabilities are clamped
to [eps, 1 - eps] with eps = 1e-7 wherever a logarithm consumes them. Binary
cross-entropy itself is evaluated from the raw logit in log-sum-exp form, so
clamping only ever touches the stability penalty.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .rng import make_rng

CLAMP_EPS = 1e-7


class ModelError(ValueError):
    """Raised for shape/argument violations in model operations."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ModelError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ModelError(f"hidden widths must be >= 1, got {self.hidden_dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        """Layer widths including input and the single output unit."""
        return (self.input_dim, *self.hidden_dims, 1)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum(d[i + 1] * d[i] + d[i + 1] for i in range(self.n_layers))


@dataclass(frozen=True)
class ModelParams:
    """Immutable per-layer weights (out x in) and biases (out,)."""

    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        d = self.arch.dims
        ws, bs = [], []
        if len(self.weights) != self.arch.n_layers or len(self.biases) != self.arch.n_layers:
            raise ModelError("layer count mismatch with architecture")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
            b = np.ascontiguousarray(np.asarray(b, dtype=np.float64))
            if w.shape != (d[l + 1], d[l]) or b.shape != (d[l + 1],):
                raise ModelError(
                    f"layer {l}: expected W{(d[l + 1], d[l])}, b{(d[l + 1],)}; "
                    f"got W{w.shape}, b{b.shape}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelError(f"layer {l}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def to_flat(self) -> np.ndarray:
        """Row-major flattening: W0, b0, W1, b1, ..."""
        return np.concatenate(
            [a.ravel() for pair in zip(self.weights, self.biases) for a in pair]
        )

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.n_params,):
            raise ModelError(f"expected {arch.n_params} parameters, got {flat.shape}")
        d = arch.dims
        ws, bs, off = [], [], 0
        for l in range(arch.n_layers):
            n_w = d[l + 1] * d[l]
            ws.append(flat[off : off + n_w].reshape(d[l + 1], d[l]))
            off += n_w
            bs.append(flat[off : off + d[l + 1]])
            off += d[l + 1]
        return cls(arch=arch, weights=tuple(ws), biases=tuple(bs))


@dataclass
class AdamState:
    """First/second-moment accumulators over the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, arch: Architecture, **hyper) -> "AdamState":
        n = arch.n_params
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


@dataclass(frozen=True)
class PenaltyContext:
    """Per-batch slice of cached bootstrap log-predictions.

    ``log_preds`` has shape (M_sub, batch); columns align with batch rows and
    rows are the pool members selected for this iteration.
    """

    log_preds: np.ndarray
    member_ids: tuple[int, ...]
    lam: float

    def __post_init__(self):
        lp = np.ascontiguousarray(np.asarray(self.log_preds, dtype=np.float64))
        lp.setflags(write=False)
        object.__setattr__(self, "log_preds", lp)
        if lp.ndim != 2:
            raise ModelError("penalty log_preds must be 2-D (members x batch)")
        if len(self.member_ids) != lp.shape[0]:
            raise ModelError("member_ids length must match log_preds rows")
        if self.lam < 0:
            raise ModelError(f"lambda must be >= 0, got {self.lam}")


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Fan-in-scaled uniform init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.

    Layers are drawn in order from a single PCG64 stream, so the scheme is
    deterministic per seed.
    """
    rng = make_rng(seed)
    d = arch.dims
    ws, bs = [], []
    for l in range(arch.n_layers):
        bound = 1.0 / np.sqrt(d[l])
        ws.append(rng.uniform(-bound, bound, size=(d[l + 1], d[l])))
        bs.append(np.zeros(d[l + 1]))
    return ModelParams(arch=arch, weights=tuple(ws), biases=tuple(bs))


def _as_matrix(x, p: int) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or (x.size and x.shape[1] != p):
        raise ModelError(f"expected rows of length {p}, got shape {x.shape}")
    return x


def forward_logit_batch(params: ModelParams, X) -> np.ndarray:
    """Raw output-unit logits, one per row of X."""
    X = _as_matrix(X, params.arch.input_dim)
    if X.shape[0] == 0:
        return np.empty(0)
    if not np.isfinite(X).all():
        raise ModelError("non-finite input")
    return backend.kernel.forward_logits(
        params.to_flat(), np.asarray(params.arch.dims, dtype=np.int64), X
    )


def forward_batch(params: ModelParams, X) -> np.ndarray:
    """Row-wise event probabilities sigma(logit), in (0, 1)."""
    logits = forward_logit_batch(params, X)
    e = np.exp(-np.abs(logits))  # overflow-safe sigmoid
    return np.where(logits >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def forward(params: ModelParams, x) -> float:
    """Single-row probability; the logit is available via forward_logit."""
    return float(forward_batch(params, x)[0])


def forward_logit(params: ModelParams, x) -> float:
    return float(forward_logit_batch(params, x)[0])


def clamp_probs(p: np.ndarray, eps: float = CLAMP_EPS) -> np.ndarray:
    """Clamp probabilities to [eps, 1 - eps] before any logarithm."""
    return np.clip(p, eps, 1.0 - eps)


def grad_loss(
    params: ModelParams,
    batch: tuple[np.ndarray, np.ndarray],
    penalty_ctx: PenaltyContext | None = None,
    clamp_eps: float = CLAMP_EPS,
) -> tuple[float, ModelParams]:
    """Penalised objective on a batch and its exact gradient.

    The objective is mean binary cross-entropy plus, when ``penalty_ctx`` is
    given, lambda times the batch-mean over rows of the member-mean absolute
    log-prediction distance to the cached bootstrap predictions. Without a
    context this is the plain BCE gradient.
    """
    X, y = batch
    X = _as_matrix(X, params.arch.input_dim)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if X.shape[0] == 0:
        raise ModelError("empty batch")
    if y.shape[0] != X.shape[0]:
        raise ModelError(f"batch size mismatch: {X.shape[0]} rows vs {y.shape[0]} labels")

    lam = 0.0
    cache = None
    if penalty_ctx is not None:
        if penalty_ctx.log_preds.shape[1] != X.shape[0]:
            raise ModelError(
                f"penalty context columns ({penalty_ctx.log_preds.shape[1]}) "
                f"misaligned with batch rows ({X.shape[0]})"
            )
        lam = float(penalty_ctx.lam)
        cache = np.ascontiguousarray(penalty_ctx.log_preds.T)  # kernels take (batch, members)

    loss, flat_grad = backend.kernel.loss_grad(
        params.to_flat(),
        np.asarray(params.arch.dims, dtype=np.int64),
        X,
        y,
        lam,
        cache,
        clamp_eps,
    )
    grad = ModelParams.from_flat(params.arch, flat_grad)
    if not np.isfinite(loss):
        raise ModelError("non-finite loss")
    for l, (gw, gb) in enumerate(zip(grad.weights, grad.biases)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ModelError(f"non-finite gradient at layer {l}")
    return float(loss), grad


def adam_step(
    params: ModelParams, grad: ModelParams, state: AdamState
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; pure function of its inputs."""
    if grad.arch.dims != params.arch.dims:
        raise ModelError("gradient shape mismatch")
    g = grad.to_flat()
    if not np.isfinite(g).all():
        raise ModelError("non-finite gradient")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    flat = params.to_flat() - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m,
        v=v,
        step=t,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    return ModelParams.from_flat(params.arch, flat), new_state


MODEL_SCHEMA_VERSION = 1


def _format_array(a: np.ndarray) -> str:
    # decimal with 17 significant digits: exact float64 round-trip
    return ",".join(f"{v:.17g}" for v in np.asarray(a, dtype=np.float64).ravel())


def _parse_array(s: str) -> np.ndarray:
    return np.asarray([float(v) for v in s.split(",")], dtype=np.float64) if s else np.empty(0)


def model_to_dict(params: ModelParams, *, standardisation=None, provenance=None) -> dict:
    """Versioned JSON document for a trained model.

    Layer arrays are stored row-major as comma-joined decimal strings with 17
    significant digits, which round-trips float64 exactly.
    """
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "architecture": {
            "input_dim": params.arch.input_dim,
            "hidden_dims": list(params.arch.hidden_dims),
        },
        "layers": [
            {"weights": _format_array(w), "biases": _format_array(b)}
            for w, b in zip(params.weights, params.biases)
        ],
        "standardisation": standardisation.to_dict() if standardisation is not None else None,
        "provenance": provenance or {},
    }


def model_from_dict(doc: dict) -> tuple[ModelParams, dict]:
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelError(f"unsupported model schema: {doc.get('schema_version')}")
    arch = Architecture(
        input_dim=int(doc["architecture"]["input_dim"]),
        hidden_dims=tuple(doc["architecture"]["hidden_dims"]),
    )
    d = arch.dims
    ws, bs = [], []
    for l, layer in enumerate(doc["layers"]):
        ws.append(_parse_array(layer["weights"]).reshape(d[l + 1], d[l]))
        bs.append(_parse_array(layer["biases"]))
    params = ModelParams(arch=arch, weights=tuple(ws), biases=tuple(bs))
    return params, {k: doc.get(k) for k in ("standardisation", "provenance")}


def save_model(params: ModelParams, path, *, standardisation=None, provenance=None) -> None:
    doc = model_to_dict(params, standardisation=standardisation, provenance=provenance)
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> tuple[ModelParams, dict]:
    with open(Path(path), encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def config_hash(obj) -> str:
    """Stable SHA-256 of a JSON-serialisable configuration object."""
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
