"""Finite-difference verification of autodiff gradients.

Central differences at 64-bit are the independent oracle for every
differentiable op and for composed models. Used by the test suite and by
the `selfcheck` CLI subcommand.
"""

import numpy as np

from .tensor import Tensor, backward


def fd_gradient(func, inputs: list, index: int, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``func`` w.r.t. ``inputs[index]``.

    ``func`` maps a list of float64 Tensors to a scalar Tensor and must be
    deterministic (re-evaluated 2 * size times).
    """
    base = [t.data.copy() for t in inputs]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + step
        hi = func([Tensor(b, dtype=np.float64) for b in base]).item()
        target[idx] = orig - step
        lo = func([Tensor(b, dtype=np.float64) for b in base]).item()
        target[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


def check_gradients(func, inputs: list, step: float = 1e-5, rtol: float = 1e-4,
                    floor: float = 1e-4) -> float:
    """Compare reverse-mode grads of ``func`` against central differences.

    Relative error uses max(|analytic|, |numeric|, floor) as denominator;
    the floor keeps finite-difference rounding noise from dominating where
    the true gradient vanishes. Returns the worst relative error over all
    inputs; raises AssertionError beyond ``rtol``.
    """
    live = [Tensor(t.data.copy(), requires_grad=True, dtype=np.float64) for t in inputs]
    loss = func(live)
    backward(loss)
    worst = 0.0
    for i, t in enumerate(live):
        numeric = fd_gradient(func, inputs, i, step=step)
        analytic = t.grad
        denom = np.maximum(np.abs(numeric), np.abs(analytic))
        denom = np.maximum(denom, floor)
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0
        worst = max(worst, rel)
        if rel > rtol:
            raise AssertionError(
                f"gradient check failed on input {i}: max relative error {rel:.3e} > {rtol:.0e}")
    return worst
