"""Golden-section line search, scalar and batched."""

from __future__ import annotations

import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def golden_section(f, a: float, b: float, tol: float = 1e-6) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    The endpoints are also evaluated so that boundary minima (common for
    trigger intensities clamped at 0 or 1) are returned exactly.
    """
    lo, hi = a, b
    dist = hi - lo
    best_x, best_f = a, f(a)
    fb = f(b)
    if fb < best_f:
        best_x, best_f = b, fb
    if dist <= tol:
        return best_x, best_f
    c = lo + INV_PHI2 * dist
    d = lo + INV_PHI * dist
    fc, fd = f(c), f(d)
    n = int(math.ceil(math.log(tol / dist) / math.log(INV_PHI)))
    for _ in range(n):
        if fc < fd:
            hi, d, fd = d, c, fc
            dist = hi - lo
            c = lo + INV_PHI2 * dist
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            dist = hi - lo
            d = lo + INV_PHI * dist
            fd = f(d)
    x, fx = (c, fc) if fc < fd else (d, fd)
    if fx < best_f:
        return x, fx
    return best_x, best_f


def golden_section_batch(f, a: np.ndarray, b: np.ndarray, tol: float = 1e-6):
    """Run independent golden-section searches in lockstep.

    ``f`` maps an array of trial points (one per search) to objective values.
    Returns ``(x, fx)`` arrays.
    """
    lo = np.array(a, dtype=float)
    hi = np.array(b, dtype=float)
    fa, fb = f(lo), f(hi)
    best_x = np.where(fb < fa, hi, lo)
    best_f = np.minimum(fa, fb)
    dist = hi - lo
    span = float(np.max(dist, initial=0.0))
    if span <= tol:
        return best_x, best_f
    c = lo + INV_PHI2 * dist
    d = lo + INV_PHI * dist
    fc, fd = f(c), f(d)
    n = int(math.ceil(math.log(tol / span) / math.log(INV_PHI)))
    for _ in range(n):
        left = fc < fd
        # left: keep [lo, d]; right: keep [c, hi]
        new_lo = np.where(left, lo, c)
        new_hi = np.where(left, d, hi)
        dist = new_hi - new_lo
        new_c = np.where(left, new_lo + INV_PHI2 * dist, d)
        new_d = np.where(left, c, new_lo + INV_PHI * dist)
        probe = np.where(left, new_c, new_d)
        fp = f(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        lo, hi, c, d = new_lo, new_hi, new_c, new_d
    x = np.where(fc < fd, c, d)
    fx = np.minimum(fc, fd)
    better = fx < best_f
    return np.where(better, x, best_x), np.where(better, fx, best_f)
