"""Straightforward reference implementations used as test oracles.

Deliberately loop-based and independent of the package's vectorized code.
"""
import math

import numpy as np


def clamp(v, hi):
    return min(max(v, 0), hi)


def brute_ssd(fixed, moving, disps, radius):
    H, W = fixed.shape
    out = np.zeros((H, W, len(disps)))
    for y in range(H):
        for x in range(W):
            for k, (dx, dy) in enumerate(disps):
                s = 0.0
                for oy in range(-radius, radius + 1):
                    for ox in range(-radius, radius + 1):
                        f = fixed[clamp(y + oy, H - 1), clamp(x + ox, W - 1)]
                        m = moving[clamp(y + oy + dy, H - 1), clamp(x + ox + dx, W - 1)]
                        s += (f - m) ** 2
                out[y, x, k] = s
    return out


def dense_system(fixed, gamma, beta_g, eps):
    """Dense ``L + gamma I`` for the 4-connected grid of ``fixed``."""
    H, W = fixed.shape
    n = H * W
    A = np.zeros((n, n))
    for y in range(H):
        for x in range(W):
            i = y * W + x
            for nx, ny in ((x + 1, y), (x, y + 1)):
                if nx < W and ny < H:
                    j = ny * W + nx
                    w = math.exp(-beta_g * (fixed[y, x] - fixed[ny, nx]) ** 2) + eps
                    A[i, j] -= w
                    A[j, i] -= w
                    A[i, i] += w
                    A[j, j] += w
    return A + gamma * np.eye(n)


def voxel_atoms(post, disps, values, x, y):
    """Raw (value, weight) realizations at one voxel."""
    Hm, Wm = values.shape
    out = []
    for k, (dx, dy) in enumerate(disps):
        out.append((values[clamp(y + dy, Hm - 1), clamp(x + dx, Wm - 1)], post[y, x, k]))
    return out


def group(atoms, key=lambda v: v):
    totals = {}
    for v, w in atoms:
        if w > 0:
            totals[key(v)] = totals.get(key(v), 0.0) + w
    return totals


def brute_mode(totals):
    best = max(totals.values())
    return min(k for k, w in totals.items() if w == best)


def brute_variance(totals):
    mean = sum(v * w for v, w in totals.items())
    return sum(w * (v - mean) ** 2 for v, w in totals.items())


def brute_entropy(weights):
    return -sum(w * math.log2(w) for w in weights if w > 0)
