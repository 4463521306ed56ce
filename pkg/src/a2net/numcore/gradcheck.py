from __future__ import annotations

from typing import Callable

import numpy as np

from a2net.numcore.tensor import Node

# denominators below this are treated as this; keeps near-zero entries from
# turning round-off into large relative errors
REL_FLOOR = 1e-4


def numerical_gradient(f: Callable[[], Node], param: Node, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the scalar ``f()`` w.r.t. ``param``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f().value)
        flat[i] = old - h
        fm = float(f().value)
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(f: Callable[[], Node], params, h: float = 1e-5) -> dict:
    """Backpropagate ``f()`` once and compare each parameter with finite differences.

    Returns ``{name: max relative error}``; unnamed parameters are keyed by position.
    """
    from a2net.numcore.tensor import backward

    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [np.array(p.grad, copy=True) for p in params]
    return {
        (p.name or str(i)): max_relative_error(g, numerical_gradient(f, p, h))
        for i, (p, g) in enumerate(zip(params, analytic))
    }
