"""Adam optimizer for lists of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step counter."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def for_params(cls, params: list[Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One in-place Adam update with bias correction.

    ``grads[i]`` must match ``params[i]`` in shape; pass ``p.grad`` after a
    backward pass.  Returns ``state`` (mutated) for call-chaining.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"got {len(params)} params, {len(grads)} grads, state for {len(state.m)}"
        )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    # fold both bias corrections into one scalar step size
    alpha = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        scratch = np.square(g)
        scratch *= 1.0 - b2
        v += scratch
        np.sqrt(v, out=scratch)
        scratch += state.epsilon
        np.divide(m, scratch, out=scratch)
        scratch *= alpha
        p.data -= scratch
    return state
