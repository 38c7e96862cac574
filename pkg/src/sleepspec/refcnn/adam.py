"""Adam optimizer state and update step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sleepspec.refcnn.model import ModelParams


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    v: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


def init_adam(
    params: ModelParams,
    lr: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for i in params.trainable():
        for j, tensor in enumerate((params.weights[i], params.biases[i])):
            state.m[(i, j)] = np.zeros_like(tensor, dtype=np.float64)
            state.v[(i, j)] = np.zeros_like(tensor, dtype=np.float64)
    return state


def adam_step(params: ModelParams, grads: list, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place on `params` and `state`."""
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for i in params.trainable():
        if grads[i] is None:
            continue
        for j, (tensor, grad) in enumerate(
            zip((params.weights[i], params.biases[i]), grads[i])
        ):
            g = np.asarray(grad, dtype=np.float64)
            m = state.m[(i, j)]
            v = state.v[(i, j)]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            tensor -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
                tensor.dtype
            )
    return params, state
