"""Central finite-difference verification of analytic gradients.

Used by the test suite and the `verify` CLI subcommand. Checks run in f64;
the absolute tolerance absorbs central-difference roundoff (~eps*|f|/h,
about 1e-11 for unit-scale losses at h=1e-5): discrepancies below it are
indistinguishable from exact, everything above is scored relatively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEP = 1e-5
FD_ATOL = 1e-9


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked_entries: int
    worst: tuple = ()
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-6) -> bool:
        return np.isfinite(self.max_rel_error) and self.max_rel_error <= tol


def _sample_indices(size: int, max_entries: int, rng: np.random.Generator):
    if size <= max_entries:
        return np.arange(size)
    return rng.choice(size, size=max_entries, replace=False)


def check_gradients(loss_fn, tensors: dict, h: float = DEFAULT_STEP,
                    max_entries_per_tensor: int = 64,
                    rng: np.random.Generator | None = None,
                    grad_scale: dict | None = None,
                    atol: float = FD_ATOL) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    loss_fn rebuilds the graph on every call and returns a scalar Tensor;
    `tensors` maps names to the leaf Tensors whose gradients are checked.
    `grad_scale` optionally multiplies analytic gradients per tensor name
    (used by tests to prove the check catches corrupted gradients).
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require f64 tensors")
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, t in tensors.items():
        if t.grad is None:
            raise ValueError(f"no gradient reached tensor {name!r}")
        g = t.grad.copy()
        if grad_scale and name in grad_scale:
            g = g * grad_scale[name]
        analytic[name] = g
        if not np.all(np.isfinite(g)):
            return GradCheckReport(max_rel_error=np.inf, checked_entries=0,
                                   worst=(name, -1, np.nan, np.nan))

    max_rel = 0.0
    worst = ()
    checked = 0
    per_tensor = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = _sample_indices(flat.size, max_entries_per_tensor, rng)
        a_flat = analytic[name].reshape(-1)
        tensor_max = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn().item()
            flat[i] = orig - h
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            diff = abs(a - numeric)
            rel = 0.0 if diff <= atol else diff / max(abs(a), abs(numeric))
            checked += 1
            tensor_max = max(tensor_max, rel)
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(i), float(a), float(numeric))
        per_tensor[name] = tensor_max
    for t in tensors.values():
        t.grad = None
    return GradCheckReport(max_rel_error=max_rel, checked_entries=checked,
                           worst=worst, per_tensor=per_tensor)
