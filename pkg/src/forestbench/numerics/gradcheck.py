"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from forestbench.errors import NonFiniteError, ShapeError
from forestbench.numerics.optim import Parameter
from forestbench.numerics.rng import make_rng
from forestbench.numerics.tensor import Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    probe_count: int,
    step: float = 1e-3,
    seed: int = 0,
) -> float:
    """Worst relative error between central differences and the tape.

    Probes `probe_count` randomly chosen parameter coordinates. The relative
    error uses max(|fd|, |analytic|, 1e-8) as the denominator. `loss_fn` must
    be a pure, deterministic function of the parameter values.
    """
    params = list(params)
    if not params:
        raise ValueError("grad_check needs at least one parameter")
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if loss.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NonFiniteError("grad_check: non-finite loss")
    loss.backward()
    analytic = [
        np.array(p.grad, copy=True) if p.grad is not None else np.zeros_like(p.value.data)
        for p in params
    ]

    sizes = np.array([p.value.data.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(probe_count):
        flat = int(rng.integers(total))
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        ci = flat - int(offsets[pi])
        data = params[pi].value.data
        orig = data.flat[ci]
        data.flat[ci] = orig + step
        lp = float(loss_fn().data)
        data.flat[ci] = orig - step
        lm = float(loss_fn().data)
        data.flat[ci] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NonFiniteError("grad_check: non-finite loss during probing")
        fd = (lp - lm) / (2.0 * step)
        an = float(analytic[pi].flat[ci])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        worst = max(worst, rel)
    return worst
