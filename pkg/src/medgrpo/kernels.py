"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy versions from ``_kernels_py`` are used. Set ``MEDGRPO_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _kernels_py

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:
    _compiled = None

_impl: ModuleType = _kernels_py
BACKEND = "python"


def use_backend(name: str) -> None:
    """Switch between ``"cython"`` and ``"python"`` at runtime."""
    global _impl, BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _impl, BACKEND = _compiled, "cython"
    elif name == "python":
        _impl, BACKEND = _kernels_py, "python"
    else:
        raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


if _compiled is not None and not os.environ.get("MEDGRPO_PURE_PYTHON"):
    use_backend("cython")


def _f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def temporal_iou_pairs(a, b) -> np.ndarray:
    return _impl.temporal_iou_pairs(_f64(a).reshape(-1, 2), _f64(b).reshape(-1, 2))


def box_iou_pairs(a, b) -> np.ndarray:
    return _impl.box_iou_pairs(_f64(a).reshape(-1, 4), _f64(b).reshape(-1, 4))


def group_advantages_rows(rewards) -> np.ndarray:
    return _impl.group_advantages_rows(_f64(rewards))


def clipped_surrogate_terms(ratios, adv, eps_low: float, eps_high: float):
    return _impl.clipped_surrogate_terms(_f64(ratios), _f64(adv), float(eps_low), float(eps_high))


def token_logprobs(q, actions, depth: int) -> np.ndarray:
    return _impl.token_logprobs(_f64(q), np.ascontiguousarray(actions, dtype=np.int64), int(depth))


def logit_grad(q, actions, coef, depth: int, tau: float) -> np.ndarray:
    return _impl.logit_grad(
        _f64(q), np.ascontiguousarray(actions, dtype=np.int64), _f64(coef), int(depth), float(tau)
    )
