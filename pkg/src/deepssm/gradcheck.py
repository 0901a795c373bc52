"""Central finite differences for checking tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import numeric as nm

EPS = 1e-5
# Denominators below REL_FLOOR * max(1, |f|) are clamped, so entries that are
# zero up to rounding are compared absolutely. Central differences of f carry
# an error of about ulp(f) / EPS, so the floor has to scale with |f| for the
# check to be invariant to the units of the loss.
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference(f: Callable[[], float], tensor: nm.Tensor, indices=None, eps: float = EPS) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. entries of ``tensor``.

    ``tensor.data`` is swapped temporarily for each perturbation. ``indices``
    is an iterable of flat indices; entries not visited are left as NaN.
    """
    base = tensor.data
    out = np.full(base.shape, np.nan)
    flat_idx = range(base.size) if indices is None else indices
    for i in flat_idx:
        idx = np.unravel_index(i, base.shape)
        vals = []
        for sign in (1.0, -1.0):
            pert = base.copy()
            pert[idx] += sign * eps
            pert.flags.writeable = False
            tensor.data = pert
            vals.append(float(f()))
        out[idx] = (vals[0] - vals[1]) / (2 * eps)
    tensor.data = base
    return out


def check(f: Callable[[], nm.Tensor], tensors: list[nm.Tensor], samples: int | None = None,
          seed: int = 0, eps: float = EPS) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``f`` builds a scalar tensor from ``tensors`` (which must have
    ``requires_grad``). With ``samples`` only that many random entries per
    tensor are differenced. The relative-error floor is ``REL_FLOOR * max(1, |f|)``.
    """
    with nm.Tape() as tape:
        out = f()
    grads = tape.backward(out)
    floor = REL_FLOOR * max(1.0, abs(float(out.data)))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        a = grads.get(t, np.zeros_like(t.data))
        idx = None
        if samples is not None and t.data.size > samples:
            idx = rng.choice(t.data.size, size=samples, replace=False)
        num = finite_difference(lambda: f().data, t, idx, eps)
        mask = ~np.isnan(num)
        worst = max(worst, relative_error(a[mask], num[mask], floor))
    return worst
