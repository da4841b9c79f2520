"""Smooth cutoffs, fixed test-function families and Gauss quadrature helpers."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def smoothstep(t):
    """Quintic ramp 0 -> 1 on [0, 1] with vanishing first and second derivatives at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def cutoff(x, start: float, stop: float, order: int = 0):
    """1 on [0, start], 0 on [stop, inf), quintic in between; derivative ``order`` <= 2."""
    x = np.asarray(x, dtype=float)
    w = stop - start
    t = np.clip((x - start) / w, 0.0, 1.0)
    if order == 0:
        return 1.0 - smoothstep(t)
    if order == 1:
        return -30.0 * t * t * (1.0 - t) ** 2 / w
    if order == 2:
        return -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w)
    raise ValueError("order must be 0, 1 or 2")


class CutoffChebyshev:
    """psi_k(x) = T_k(2x/S - 1) * cutoff(x), k < size, each scaled to unit C^2 norm."""

    def __init__(self, size: int, support: float, flat_until: float, normalise: bool = True):
        self.size = int(size)
        self.support = float(support)
        self.flat_until = float(flat_until)
        self.scale = np.ones(self.size)
        if normalise:
            grid = np.linspace(0.0, self.support, 4097)
            for k in range(self.size):
                norms = [np.max(np.abs(self._raw(k, grid, o))) for o in range(3)]
                self.scale[k] = 1.0 / max(norms)

    def _raw(self, k, x, order=0):
        x = np.asarray(x, dtype=float)
        S = self.support
        z = 2.0 * x / S - 1.0
        coef = np.zeros(k + 1)
        coef[k] = 1.0
        p = [C.chebval(z, coef)]
        if order >= 1:
            p.append(C.chebval(z, C.chebder(coef, 1)) * (2.0 / S))
        if order >= 2:
            p.append(C.chebval(z, C.chebder(coef, 2)) * (2.0 / S) ** 2)
        c = [cutoff(x, self.flat_until, S, o) for o in range(order + 1)]
        inside = x < S
        if order == 0:
            out = p[0] * c[0]
        elif order == 1:
            out = p[1] * c[0] + p[0] * c[1]
        else:
            out = p[2] * c[0] + 2.0 * p[1] * c[1] + p[0] * c[2]
        return np.where(inside, out, 0.0)

    def __call__(self, k, x, order=0):
        return self.scale[k] * self._raw(k, x, order)


def gauss_integrate(func, breaks):
    """Integrate ``func`` (vectorised over x) over consecutive break intervals.

    Returns the integral over each interval.
    """
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = func(x)
    return np.sum(vals * _GL_WEIGHTS[None, :], axis=1) * half


def hat(t, nodes, j):
    """Piecewise-linear hat on ``nodes`` peaking at nodes[j] (half hat at the ends)."""
    t = np.asarray(t, dtype=float)
    y = np.zeros(len(nodes))
    y[j] = 1.0
    return np.interp(t, nodes, y, left=0.0, right=0.0)


def hat_slope(t, nodes, j):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if j > 0:
        m = (t > nodes[j - 1]) & (t < nodes[j])
        out[m] = 1.0 / (nodes[j] - nodes[j - 1])
    if j < len(nodes) - 1:
        m = (t > nodes[j]) & (t < nodes[j + 1])
        out[m] = -1.0 / (nodes[j + 1] - nodes[j])
    return out
