"""Named parameters and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from forestbench.errors import ShapeError
from forestbench.numerics.tensor import Tensor, _check_finite


class Parameter:
    """A named trainable tensor; gradients are zeroed at step boundaries."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor):
        value.requires_grad = True
        self.name = name
        self.value = value

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.9999
    eps: float = 1e-8

    @classmethod
    def for_parameter(
        cls,
        param: Parameter,
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.9999,
        eps: float = 1e-8,
    ) -> "AdamState":
        z = np.zeros_like(param.value.data)
        return cls(m=z.copy(), v=z.copy(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: Parameter, state: AdamState) -> tuple[Parameter, AdamState]:
    """One bias-corrected Adam update, in place. A missing grad counts as zero."""
    g = param.grad
    if g is None:
        g = np.zeros_like(param.value.data)
    if state.m.shape != param.value.shape or state.v.shape != param.value.shape:
        raise ShapeError(
            f"adam state shape {state.m.shape} does not match parameter {param.value.shape}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    param.value.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    _check_finite(param.value.data, "adam_step")
    return param, state


class Adam:
    """Convenience wrapper applying `adam_step` across a parameter list."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.9999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.states = [
            AdamState.for_parameter(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for p in self.params
        ]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p, s)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
