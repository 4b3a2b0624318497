"""Finite-difference oracle for verifying analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    passed: bool
    max_rel_err: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_err:.3e} "
                f"at index {self.worst_index}")


def finite_diff_check(f, x, step=1e-3, tol=1e-3, abs_floor=1e-6):
    """Compare f's analytic gradient at x against central differences.

    f must be deterministic and scalar-valued.  The relative error per
    element is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor);
    the check passes iff the max over elements is <= tol.
    """
    base = np.array(x.data, copy=True)

    def eval_at(values):
        probe = Tensor(values, requires_grad=False, dtype=x.dtype)
        out = f(probe)
        if out.size != 1:
            raise ValueError("finite_diff_check requires a scalar-valued f")
        return float(out.data)

    first = eval_at(base)
    if eval_at(base) != first:
        raise ValueError("non-deterministic f: repeated evaluations disagree")

    point = Tensor(base, requires_grad=True, dtype=x.dtype)
    loss = f(point)
    backward(loss)
    analytic = point.grad.astype(np.float64).copy()

    numeric = np.zeros_like(analytic)
    flat = base.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = eval_at(base)
        flat[i] = keep - step
        lo = eval_at(base)
        flat[i] = keep
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        passed=bool(rel.max() <= tol),
        max_rel_err=float(rel.max()),
        worst_index=np.unravel_index(worst, analytic.shape),
        analytic=analytic,
        numeric=numeric,
    )
