"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradcheckResult:
    ok: bool
    max_rel_err: float
    max_abs_err: float
    checked: int
    worst: str


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    small: float = 1e-6,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradcheckResult:
    """Compare ``backward`` gradients of the scalar ``fn()`` against central differences.

    Every element of every tensor in ``inputs`` is perturbed (or a random
    subset of ``max_elements`` per tensor). An element passes when its
    relative error is below ``rtol``, or, where ``|fd| < small``, when the
    absolute error is below ``atol``. All tensors must be float64.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    ok = True
    worst_rel = worst_abs = 0.0
    worst = ""
    checked = 0
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_elements, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            an = analytic[k].reshape(-1)[i]
            abs_err = abs(an - fd)
            if abs(fd) < small:
                passed = abs_err < atol
                rel = 0.0 if passed else abs_err / max(abs(fd), 1e-300)
            else:
                rel = abs_err / abs(fd)
                passed = rel < rtol
            checked += 1
            if not passed:
                ok = False
            if rel > worst_rel or (not passed and not worst):
                worst_rel = max(worst_rel, rel)
                worst = f"input {k} ({t.name or t.shape}) element {i}: analytic {an:.6e} fd {fd:.6e}"
            worst_abs = max(worst_abs, abs_err)
    for t in inputs:
        t.grad = None
    return GradcheckResult(ok, worst_rel, worst_abs, checked, worst)
