"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .tensor import Parameter, Tensor, no_grad


class NumericError(ArithmeticError):
    """The checked function produced a non-finite value."""


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _value(f: Callable[[], Tensor]) -> float:
    with no_grad():
        v = f()
    val = float(v.data.reshape(-1)[0]) if isinstance(v, Tensor) else float(v)
    if not np.isfinite(val):
        raise NumericError(f"checked function returned {val}")
    return val


def check_gradients(f: Callable[[], Tensor], params: Iterable[Parameter],
                    eps: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    Every element of every parameter is perturbed by ``±eps``.  The error per
    element is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NumericError("checked function returned a non-finite value")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst, worst_name, n = 0.0, "", 0
    per_param = {}
    for i, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        name = p.name or f"param{i}"
        local = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = _value(f)
            flat[j] = orig - eps
            fm = _value(f)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(gflat[j] - numeric) / max(1.0, abs(gflat[j]))
            local = max(local, err)
            n += 1
        per_param[name] = local
        if local >= worst:
            worst, worst_name = local, name
    for p in params:
        p.grad = None
    return GradCheckReport(max_rel_error=worst, worst=worst_name, n_checked=n, per_param=per_param)
