"""Kernel backend selection.

The compiled Cython core (``bootstab._core``) is preferred; the pure-numpy
fallback (``bootstab._core_py``) is used when it is missing or when the
environment variable ``BOOTSTAB_BACKEND`` is set to ``numpy``. Set it to
``cython`` to fail hard when the compiled core is unavailable.

Both kernels implement the same semantics; results agree to floating-point
summation order (see ``python -m bootstab.benchmark``). Within one backend,
training is bit-reproducible for fixed seeds.
"""

import os

from . import _core_py


def _select():
    choice = os.environ.get("BOOTSTAB_BACKEND", "auto").lower()
    if choice not in ("auto", "cython", "numpy"):
        raise ValueError(f"BOOTSTAB_BACKEND must be auto|cython|numpy, got {choice!r}")
    if choice == "numpy":
        return _core_py
    try:
        from . import _core

        return _core
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "BOOTSTAB_BACKEND=cython but the compiled core is not built; "
                "run `pip install -e .` with Cython and a C compiler available"
            ) from None
        return _core_py


kernel = _select()
NAME: str = kernel.NAME


def available_backends() -> list[str]:
    names = []
    try:
        from . import _core  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    names.append("numpy")
    return names


def get_kernel(name: str):
    """Fetch a specific kernel module (used by the backend benchmark/tests)."""
    if name == "numpy":
        return _core_py
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
