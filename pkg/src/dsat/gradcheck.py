"""Central-difference verification of analytic gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, no_grad


@dataclass
class GradCheckEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: GradCheckEntry | None
    n_elements: int
    tol: float
    eps: float
    elapsed_s: float
    failures: list[GradCheckEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures and np.isfinite(self.max_rel_error)

    def summary(self) -> str:
        lines = [
            f"checked {self.n_elements} parameter elements "
            f"(eps={self.eps:g}, tol={self.tol:g}, {self.elapsed_s:.1f}s)",
            f"max relative error: {self.max_rel_error:.3e}"
            + (f" at {self.worst.param}[{self.worst.index}]" if self.worst else ""),
        ]
        for f in self.failures[:10]:
            lines.append(
                f"  FAIL {f.param}[{f.index}]: analytic={f.analytic:.6e} "
                f"numeric={f.numeric:.6e} rel={f.rel_error:.3e}"
            )
        if len(self.failures) > 10:
            lines.append(f"  ... {len(self.failures) - 10} more failures")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: Sequence[tuple[str, Parameter]],
               eps: float = 1e-4, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must be deterministic: every stochastic switch (noise, dropout,
    path selection) has to be pinned by the caller. The relative error is
    ``|analytic - numeric| / max(1, |numeric|)``; entries above ``tol`` or
    non-finite on either side are recorded as failures.
    """
    start = time.perf_counter()
    for _, p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued computation")
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params}

    worst: GradCheckEntry | None = None
    failures: list[GradCheckEntry] = []
    max_rel = 0.0
    n = 0
    with no_grad():
        for name, p in params:
            flat = p.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(a_flat[i])
                if not (np.isfinite(a) and np.isfinite(numeric)):
                    entry = GradCheckEntry(name, i, a, numeric, float("inf"))
                    failures.append(entry)
                    worst = entry
                    max_rel = float("inf")
                    continue
                rel = abs(a - numeric) / max(1.0, abs(numeric))
                if rel > max_rel:
                    max_rel = rel
                    worst = GradCheckEntry(name, i, a, numeric, rel)
                if rel > tol:
                    failures.append(GradCheckEntry(name, i, a, numeric, rel))
                n += 1

    return GradCheckReport(max_rel_error=max_rel, worst=worst, n_elements=n,
                           tol=tol, eps=eps,
                           elapsed_s=time.perf_counter() - start,
                           failures=failures)
