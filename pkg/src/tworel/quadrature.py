"""Adaptive Simpson quadrature for Python-level integrands."""

from __future__ import annotations

import math
from typing import Callable, Sequence


class QuadratureError(RuntimeError):
    """Raised when the error target is not met; ``achieved`` holds the estimate reached."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-8,
                     max_depth: int = 40) -> tuple[float, float]:
    """Integral of ``f`` over [a, b] with absolute error target ``tol``.

    Returns ``(value, error_estimate)``. Uses an explicit stack so deep
    refinement near kinks does not hit the recursion limit.
    """
    if b < a:
        raise ValueError("require a <= b")
    if b == a:
        return 0.0, 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    err = 0.0
    worst = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl = f(0.5 * (lo + mid))
        fr = f(0.5 * (mid + hi))
        left = (mid - lo) * (flo + 4.0 * fl + fmid) / 6.0
        right = (hi - mid) * (fmid + 4.0 * fr + fhi) / 6.0
        diff = left + right - est
        if abs(diff) <= 15.0 * eps or depth >= max_depth:
            if abs(diff) > 15.0 * eps:
                worst = max(worst, abs(diff) / 15.0)
            total += left + right + diff / 15.0
            err += abs(diff) / 15.0
            continue
        stack.append((mid, hi, fmid, fr, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, fl, fmid, left, 0.5 * eps, depth + 1))
    if worst > 0.0 and err > tol:
        raise QuadratureError(
            f"adaptive Simpson on [{a}, {b}] did not reach tolerance {tol:g}; achieved {err:.3g}", err
        )
    return total, err


def integrate_pieces(f: Callable[[float], float], points: Sequence[float], tol: float = 1e-8,
                     max_depth: int = 40) -> tuple[float, float]:
    """Integrate over consecutive intervals of the sorted ``points``, splitting ``tol`` by length."""
    span = points[-1] - points[0]
    total = 0.0
    err = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        if hi <= lo:
            continue
        share = tol * (hi - lo) / span if span > 0 else tol
        v, e = adaptive_simpson(f, lo, hi, share, max_depth)
        total += v
        err += e
    if not math.isfinite(total):
        raise QuadratureError("integral is not finite", math.inf)
    return total, err
