"""Adam optimizer over named parameter dicts."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction, in place on ``params``.

    Aborts before touching any parameter if a gradient contains NaN/Inf.
    """
    names = sorted(params)
    for name in names:
        g = params[name].grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient in '{name}', step aborted")
    state.step += 1
    t = state.step
    for name in names:
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def zero_grads(params: dict):
    for p in params.values():
        p.zero_grad()


def parameter_digest(params: dict) -> str:
    """Stable digest over sorted parameter names and raw bytes."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def clone_params(params: dict) -> dict:
    return {name: p.data.copy() for name, p in params.items()}


def restore_params(params: dict, snapshot: dict):
    for name, data in snapshot.items():
        params[name].data[...] = data


def count_params(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def make_param(data, name_hint: str = "") -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)
