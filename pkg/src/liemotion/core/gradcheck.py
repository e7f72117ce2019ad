"""Central-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst: tuple[int, int]  # (parameter index, flat element index)
    checked: int
    passed: bool


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-8, scale_floor: float = 1e-2,
               max_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must be deterministic (reseed any noise inside it). Relative error
    per element is |a - n| / max(|a|, |n|, floor, scale_floor * max|a|), the
    max taken over the whole parameter tensor. The last term stops entries
    far below the tensor's gradient scale, where central differences are
    pure rounding noise, from dominating the report. With ``max_per_param``
    only a random subset of each parameter's entries is perturbed.
    """
    with Tape() as tape:
        out = f()
    analytic = tape.gradient(out, list(params))

    worst_rel, worst_abs, worst, count = 0.0, 0.0, (0, 0), 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_per_param, replace=False))
        a_flat = analytic[pi].reshape(-1)
        denom_floor = max(floor, scale_floor * float(np.max(np.abs(a_flat), initial=0.0)))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = a_flat[i]
            err = abs(a - num)
            rel = err / max(abs(a), abs(num), denom_floor)
            count += 1
            if rel > worst_rel:
                worst_rel, worst = float(rel), (pi, int(i))
            worst_abs = max(worst_abs, float(err))
    return GradCheckReport(worst_rel, worst_abs, worst, count, bool(worst_rel < tol))
