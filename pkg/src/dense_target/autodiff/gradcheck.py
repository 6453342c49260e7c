"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numerical_grad(fn, arrays, step: float = 1e-5) -> list:
    """Central differences of scalar ``fn()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + step
            fp = fn()
            a[idx] = orig - step
            fm = fn()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """``max |a - n| / max(|a|, |n|, floor)`` over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(build_loss, params, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between backprop and finite differences.

    ``build_loss()`` must rebuild the graph from ``params`` (Tensors) and
    return a scalar Tensor.
    """
    for p in params:
        p.grad = None
    build_loss().backward()
    analytic = [p.grad.copy() for p in params]
    numeric = numerical_grad(lambda: float(build_loss().data), [p.data for p in params], step)
    return max(max_relative_error(a, n, floor) for a, n in zip(analytic, numeric))
