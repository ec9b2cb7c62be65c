"""Finite-difference verification of analytic gradients.

Checks every element of every parameter leaf with central differences in
float64 and reports the worst relative error.
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import flatten_tree, zero_grads

__all__ = ["GradCheckReport", "grad_check"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_leaf: str
    per_leaf: dict = field(default_factory=dict)

    def passed(self, tolerance):
        return self.max_rel_error < tolerance

    def summary(self, tolerance=1e-4):
        verdict = "PASS" if self.passed(tolerance) else "FAIL"
        return (f"grad check: max rel error {self.max_rel_error:.3e} "
                f"at '{self.worst_leaf}' [{verdict} @ {tolerance:g}]")


def _rel_err(a, n):
    # The denominator floor makes near-zero elements an absolute comparison
    # at the same tolerance scale; otherwise central-difference roundoff
    # (~eps * |loss| / step) dominates and flags correct gradients.
    denom = max(abs(a) + abs(n), 1e-3)
    return abs(a - n) / denom


def grad_check(params, loss_fn, step=1e-5):
    """Compare analytic gradients of ``loss_fn(params)`` with central FD.

    ``params`` is a (possibly nested) dict of float64 Tensor leaves;
    ``loss_fn`` must return a scalar Tensor and be deterministic.
    """
    leaves = flatten_tree(params)
    for name, leaf in leaves.items():
        if leaf.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 leaves; '{name}' "
                             f"is {leaf.data.dtype}")
    zero_grads(params)
    loss = loss_fn(params)
    loss.backward()
    analytic = {k: (np.zeros_like(v.data) if v.grad is None else v.grad.copy())
                for k, v in leaves.items()}

    worst = 0.0
    worst_leaf = "<none>"
    per_leaf = {}
    for name, leaf in leaves.items():
        flat = leaf.data.ravel()
        leaf_worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = float(loss_fn(params).data)
            flat[idx] = orig - step
            lo = float(loss_fn(params).data)
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * step)
            err = _rel_err(float(analytic[name].ravel()[idx]), numeric)
            leaf_worst = max(leaf_worst, err)
        per_leaf[name] = leaf_worst
        if leaf_worst > worst:
            worst, worst_leaf = leaf_worst, name
    return GradCheckReport(worst, worst_leaf, per_leaf)
