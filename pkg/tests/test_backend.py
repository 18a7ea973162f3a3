import subprocess
import sys

import numpy as np
import pytest

from bootstab import backend

cython_available = "cython" in backend.available_backends()
needs_cython = pytest.mark.skipif(not cython_available, reason="compiled core not built")


def _setup(seed=0, n=256, p=9, hidden=(10, 5)):
    rng = np.random.default_rng(seed)
    dims = np.array([p, *hidden, 1], dtype=np.int64)
    n_params = sum(int(dims[l + 1] * dims[l] + dims[l + 1]) for l in range(len(dims) - 1))
    flat = rng.normal(0, 0.4, n_params)
    X = rng.standard_normal((n, p))
    y = rng.integers(0, 2, n).astype(np.float64)
    return dims, flat, X, y


def test_numpy_backend_always_available():
    assert backend.available_backends()[-1] == "numpy"
    kern = backend.get_kernel("numpy")
    assert kern.NAME == "numpy"


def test_env_override_selects_numpy():
    code = (
        "import bootstab.backend as b; print(b.NAME)"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"BOOTSTAB_BACKEND": "numpy", "PATH": "/usr/bin:/bin"},
    )
    assert out.stdout.strip() == "numpy"


@needs_cython
def test_forward_logits_agree():
    dims, flat, X, _ = _setup()
    cy = backend.get_kernel("cython").forward_logits(flat, dims, X)
    py = backend.get_kernel("numpy").forward_logits(flat, dims, X)
    assert np.abs(cy - py).max() < 1e-12


@needs_cython
@pytest.mark.parametrize("lam", [0.0, 0.25])
def test_loss_grad_agree(lam):
    dims, flat, X, y = _setup(seed=1)
    rng = np.random.default_rng(2)
    cache = np.log(rng.uniform(0.05, 0.95, (X.shape[0], 13))) if lam else None
    cy_loss, cy_grad = backend.get_kernel("cython").loss_grad(flat, dims, X, y, lam, cache, 1e-7)
    py_loss, py_grad = backend.get_kernel("numpy").loss_grad(flat, dims, X, y, lam, cache, 1e-7)
    assert cy_loss == pytest.approx(py_loss, abs=1e-12)
    assert np.abs(cy_grad - py_grad).max() < 1e-12


@needs_cython
def test_train_loop_agree_and_deterministic():
    dims, flat, X, y = _setup(seed=3, n=300)
    rng = np.random.default_rng(4)
    epochs, bs, m_pool, m_sub = 4, 64, 20, 8
    perms = np.stack([rng.permutation(X.shape[0]) for _ in range(epochs)]).astype(np.int64)
    steps = epochs * (-(-X.shape[0] // bs))
    subs = np.argsort(rng.random((steps, m_pool)), axis=1)[:, :m_sub].astype(np.int64)
    cache_t = np.log(rng.uniform(0.05, 0.95, (X.shape[0], m_pool)))
    args = (flat, dims, X, y, 0.2, cache_t, perms, subs, bs, 1e-3, 0.9, 0.999, 1e-8, 1e-7)

    cy1 = backend.get_kernel("cython").train_loop(*args)
    cy2 = backend.get_kernel("cython").train_loop(*args)
    py1 = backend.get_kernel("numpy").train_loop(*args)
    assert np.array_equal(cy1[0], cy2[0])  # bit-reproducible within a backend
    assert np.abs(cy1[0] - py1[0]).max() < 1e-10  # backends agree to summation order
    assert cy1[1] == pytest.approx(py1[1], abs=1e-12)
    assert cy1[2] == pytest.approx(py1[2], abs=1e-12)


@needs_cython
def test_train_loop_divergence_raises_in_both():
    dims, flat, X, y = _setup(seed=5, n=64)
    perms = np.stack([np.arange(64)] * 4).astype(np.int64)
    huge_lr = 1e200  # params explode after one step; objective goes non-finite next
    for name in ("cython", "numpy"):
        with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
            backend.get_kernel(name).train_loop(
                flat, dims, X, y, 0.0, None, perms, None, 64, huge_lr, 0.9, 0.999, 1e-8, 1e-7
            )


def test_benchmark_module_runs():
    from bootstab.benchmark import run_benchmark

    res = run_benchmark(n=200, epochs=2, batch_size=64, pool_size=10, subsample_size=4)
    for name in res["backends"]:
        assert res[name]["train_plain_s"] > 0
    if len(res["backends"]) == 2:
        assert res["max_param_diff"] < 1e-9
