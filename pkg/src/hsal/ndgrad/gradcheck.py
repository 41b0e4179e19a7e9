"""Central finite-difference checking of backward rules."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
              eps: float = 1e-5, sample: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    loss_fn must rebuild the scalar loss from the tensors' current data.
    Relative error uses max(|analytic|, |numeric|, 1) as denominator so
    near-zero gradients are compared absolutely. If ``sample`` is given,
    only that many randomly chosen coordinates per tensor are probed.
    """
    for t in tensors:
        t.zero_grad()
    backward(loss_fn())
    worst = 0.0
    for t in tensors:
        ana = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        af = ana.reshape(-1)
        if sample is None or sample >= flat.size:
            coords = range(flat.size)
        else:
            coords = (rng or np.random.default_rng()).choice(
                flat.size, size=sample, replace=False)
        for i in coords:
            saved = flat[i]
            with no_grad():
                flat[i] = saved + eps
                fp = loss_fn().item()
                flat[i] = saved - eps
                fm = loss_fn().item()
            flat[i] = saved
            num = (fp - fm) / (2.0 * eps)
            rel = abs(num - af[i]) / max(abs(num), abs(af[i]), 1.0)
            worst = max(worst, rel)
    return worst
