"""Central finite differences, used as the independent oracle for backward()."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, new_tape, no_grad

REL_TOL = 1e-4
ABS_FLOOR = 1e-6


def _as_float(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def finite_difference_gradient(fn: Callable[[Tensor], object], x: Tensor | np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """(fn(x + h e_i) - fn(x - h e_i)) / 2h for every coordinate i of ``x``.

    ``x`` is perturbed in place and restored; ``fn`` must read it on each call.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _as_float(fn(x))
            flat[i] = orig - h
            fm = _as_float(fn(x))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"fn returned a non-finite value at coordinate {i}")
            grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = ABS_FLOOR / REL_TOL) -> float:
    """Max over coordinates of |a - n| / max(|a|, |n|, floor).

    With the default floor a value <= REL_TOL means every coordinate is within
    REL_TOL relative error or within ABS_FLOOR absolute error.
    """
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor],
                    h: float = 1e-5) -> dict[str, float]:
    """Compare backward() against finite differences for each named tensor.

    ``loss_fn`` rebuilds the scalar loss from the current values of
    ``tensors``.  Returns the max relative error per name.
    """
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    with new_tape() as tape:
        loss = loss_fn()
        backward(loss, tape)
    out = {}
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = finite_difference_gradient(lambda _x: loss_fn(), t, h)
        out[name] = relative_error(analytic, numeric)
    return out
