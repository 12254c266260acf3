"""Shared test utilities: gradient checking and small synthetic inputs."""

import numpy as np

from sigfuse.embedding import EmbeddingModel, batch_triplet_loss

SMALL_ARCH = (
    {"type": "conv", "out": 2, "kernel": 3},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "conv", "out": 3, "kernel": 3},
    {"type": "relu"},
    {"type": "linear", "out": 8},
    {"type": "relu"},
    {"type": "linear", "out": 4},
)


def relative_errors(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_gradient(model, anchors, positives, negatives, margin, step=1e-4, indices=None):
    base = model.params.copy()
    indices = range(base.size) if indices is None else indices
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        model.params[i] = base[i] + step
        up, _ = batch_triplet_loss(model, anchors, positives, negatives, margin)
        model.params[i] = base[i] - step
        down, _ = batch_triplet_loss(model, anchors, positives, negatives, margin)
        model.params[i] = base[i]
        out[k] = (up - down) / (2 * step)
    return out


def gradcheck(model, anchors, positives, negatives, margin, step=1e-4, indices=None):
    """Fraction of checked parameters whose relative error is <= 1e-3, plus the hinge values."""
    _, grad = batch_triplet_loss(model, anchors, positives, negatives, margin)
    idx = np.arange(model.n_params) if indices is None else np.asarray(indices)
    num = numeric_gradient(model, anchors, positives, negatives, margin, step, idx)
    err = relative_errors(grad[idx], num)
    return float((err <= 1e-3).mean()), err


def hinges(model, anchors, positives, negatives, margin):
    ea, ep, en = model.forward(anchors), model.forward(positives), model.forward(negatives)
    return np.linalg.norm(ea - ep, axis=1) - np.linalg.norm(ea - en, axis=1) + margin


def random_inputs(rng, count, size=(8, 8)):
    return rng.uniform(0, 1, size=(count, 1) + tuple(size))


def small_model(seed=0, size=(8, 8)):
    return EmbeddingModel(SMALL_ARCH, size, seed=seed)
