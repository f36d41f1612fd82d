"""Independent reference implementations used to check the production paths.

These stay deliberately naive: enumeration, explicit all-pairs summation,
dense matrices. None of them share code with the package.
"""

import itertools

import numpy as np


def brute_force_two_partition_inertia(points):
    """Optimal 2-cluster inertia by enumerating every nontrivial bipartition."""
    n = len(points)
    best = np.inf
    for bits in itertools.product([0, 1], repeat=n - 1):
        assign = np.array((0,) + bits)
        if assign.min() == assign.max():
            continue
        total = 0.0
        for c in (0, 1):
            members = points[assign == c]
            total += ((members - members.mean(axis=0)) ** 2).sum()
        best = min(best, total)
    return best


def brute_force_assignment(cost):
    """Lexicographically-smallest minimum-cost assignment by enumeration."""
    n = cost.shape[0]
    best, best_total = None, np.inf
    for perm in itertools.permutations(range(n)):
        total = sum(cost[r, c] for r, c in enumerate(perm))
        if total < best_total - 1e-12:
            best, best_total = perm, total
    return list(enumerate(best)), best_total


def dense_kernel_matrices(rgb, params):
    """All-pairs kernel matrices for the windowed CRF model.

    Both kernels are zero outside their 3-sigma window by the model's
    definition, and the self pair is excluded.
    """
    h, w = rgb.shape[:2]
    n = h * w
    ys, xs = np.divmod(np.arange(n), w)
    dy = ys[:, None] - ys[None, :]
    dx = xs[:, None] - xs[None, :]
    d2 = dy * dy + dx * dx
    flat = rgb.reshape(n, 3).astype(np.float64)
    rgb2 = np.sum((flat[:, None, :] - flat[None, :, :]) ** 2, axis=-1)

    in_g = (np.abs(dy) <= params.gaussian_radius) & (np.abs(dx) <= params.gaussian_radius)
    kg = np.exp(-d2 / (2 * params.gaussian_sx ** 2)) * in_g
    in_b = (np.abs(dy) <= params.bilateral_radius) & (np.abs(dx) <= params.bilateral_radius)
    kb = np.exp(-d2 / (2 * params.bilateral_sx ** 2)
                - rgb2 / (2 * params.bilateral_srgb ** 2)) * in_b
    np.fill_diagonal(kg, 0.0)
    np.fill_diagonal(kb, 0.0)
    return kg, kb


def mean_field_step_reference(q, log_unary, rgb, params):
    """One mean-field update via explicit all-pairs summation."""
    kg, kb = dense_kernel_matrices(rgb, params)
    nclass, h, w = q.shape
    flat = q.reshape(nclass, -1)
    scores = (
        log_unary.reshape(nclass, -1)
        + params.gaussian_weight * flat @ kg.T
        + params.bilateral_weight * flat @ kb.T
    )
    shifted = scores - scores.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=0, keepdims=True)).reshape(nclass, h, w)
