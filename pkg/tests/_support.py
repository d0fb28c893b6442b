"""Shared helpers for the test modules."""

import numpy as np

from lqot import kge
from lqot.adjacency import SparseRelationMatrix


def random_matrices(rng, n, n_relations, density=0.4, binary=False):
    out = {}
    for r in range(n_relations):
        mask = rng.random((n, n)) < density
        dense = np.where(mask, 1.0 if binary else np.clip(rng.random((n, n)), 1e-3, 1.0), 0.0)
        out[r] = SparseRelationMatrix.from_dense(r, dense)
    return out


def gradient_check(model, examples, l2, step=1e-5):
    """Largest norm-relative error between analytic and central-difference gradients."""
    _, analytic = kge.loss_and_grad(model, examples, l2)
    worst = 0.0
    for p, g in zip(model.params(), analytic):
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up, _ = kge.loss_and_grad(model, examples, l2)
            p[idx] = orig - step
            down, _ = kge.loss_and_grad(model, examples, l2)
            p[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        scale = max(np.linalg.norm(g), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, np.linalg.norm(g - numeric) / scale)
    return worst
