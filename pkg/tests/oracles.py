"""Reference implementations written straight from the definitions.

Nothing here calls into the package's numerical code; tests compare the
package against these.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def coordinate_outcomes(kind, v, p=None, s=None):
    """Per-coordinate ``(low_value, high_value, P(high))`` of a quantizer.

    Every quantizer maps a coordinate to one of two values. Sparsifier
    arithmetic stays in ``Fraction`` when ``v`` and ``p`` are rational.
    """
    out = []
    if kind == "sparsifier":
        for vi, pi in zip(v, p):
            out.append((0, vi / pi if vi != 0 else 0, pi if vi != 0 else 0))
        return out
    if kind == "identity":
        return [(vi, vi, 1) for vi in v]
    norm = math.sqrt(sum(float(x) ** 2 for x in v))
    levels = 1 if kind == "ternary" else s
    for vi in v:
        if vi == 0:
            out.append((0.0, 0.0, 0.0))
            continue
        a = abs(float(vi)) / norm
        low = min(math.floor(a * levels), levels - 1)
        sign = 1.0 if vi > 0 else -1.0
        out.append((sign * norm * low / levels, sign * norm * (low + 1) / levels, a * levels - low))
    return out


def enumerate_outcomes(coords):
    """All joint outcomes as ``(probability, vector)`` pairs; zero-probability branches dropped."""
    choices = []
    for lo, hi, ph in coords:
        opts = []
        if ph != 0:
            opts.append((ph, hi))
        if ph != 1:
            opts.append((1 - ph, lo))
        choices.append(opts)
    for combo in itertools.product(*choices):
        prob = 1
        vec = []
        for pr, val in combo:
            prob = prob * pr
            vec.append(val)
        yield prob, vec


def moments(coords):
    """Exact ``E[Q]``, ``E||Q||^2``, ``E||Q||_0`` by enumeration."""
    d = len(coords)
    mean = [0] * d
    second = 0
    nnz = 0
    for prob, vec in enumerate_outcomes(coords):
        for i, x in enumerate(vec):
            mean[i] = mean[i] + prob * x
        second = second + prob * sum(x * x for x in vec)
        nnz = nnz + prob * sum(1 for x in vec if x != 0)
    return mean, second, nnz


def plain_gd(grad, x0, gamma, iters):
    """Textbook gradient descent; returns the iterates x_0..x_{iters-1}."""
    xs = [np.array(x0, dtype=float)]
    for _ in range(iters - 1):
        xs.append(xs[-1] - gamma * grad(xs[-1]))
    return np.array(xs)


def plain_iag(grads, x0, gamma, iters, delay):
    """Incremental aggregated gradient with ``delay(k, i)`` staleness."""
    xs = [np.array(x0, dtype=float)]
    for k in range(iters - 1):
        g = sum(grads[i](xs[k - delay(k, i)]) for i in range(len(grads)))
        xs.append(xs[k] - gamma * g)
    return np.array(xs)


def dense_conflict_degrees(supports):
    sets = [set(s) for s in supports]
    return [sum(1 for j, t in enumerate(sets) if j != i and s & t) for i, s in enumerate(sets)]


def lsq_gradient(A, b, rho, reg, x):
    A = np.asarray(A, dtype=float)
    return A.T @ (A @ x - b) / rho + reg * x


def grid_vectors(grid, d):
    for v in itertools.product(grid, repeat=d):
        if any(x != 0 for x in v):
            yield list(v)


FRACTION_GRID = [Fraction(x) for x in (-2, -1, 0, 1, 2)]
