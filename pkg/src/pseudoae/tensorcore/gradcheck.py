from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. every element of ``param``."""
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(loss_fn().data)
        flat[i] = old - h
        fm = float(loss_fn().data)
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(loss_fn: Callable[[], Tensor], params: list[Tensor], h: float = 1e-4,
              atol: float = 1e-6) -> float:
    """Largest elementwise relative error between backprop and finite differences.

    ``params`` should hold float64 data (build them under ``check_mode()``).
    """
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, max_relative_error(analytic, numerical_grad(loss_fn, p, h), atol))
    return worst
