"""Mini-batch SGD with momentum, and a finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionError, NumericalError, TrainingSetupError
from .network import REFERENCE_ARCHITECTURE, ClassifierModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainParams:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    architecture: str = REFERENCE_ARCHITECTURE


def train(patches, labels, params: TrainParams = TrainParams(), seed: int = 0,
          model: ClassifierModel | None = None) -> ClassifierModel:
    """Minimise mean cross-entropy; labels are 1 (deformation) or 0 (background).

    Deterministic for a fixed seed: initialisation and the per-epoch shuffle
    both come from ``default_rng(seed)`` and gradients are accumulated in a
    fixed order on one thread.
    """
    patches = np.asarray(patches)
    labels = np.asarray(labels, dtype=np.int64)
    if patches.ndim != 3 or len(patches) != len(labels):
        raise DimensionError(f"need (n, H, W) patches and n labels, got {patches.shape} and {labels.shape}")
    classes = set(np.unique(labels).tolist())
    if not classes <= {0, 1}:
        raise TrainingSetupError(f"labels must be 0 or 1, got {sorted(classes)}")
    if len(classes) < 2:
        raise TrainingSetupError(f"training set contains a single class {sorted(classes)}")
    if model is None:
        model = ClassifierModel.initialize(seed, params.architecture)
    rng = np.random.default_rng([seed, 1])
    velocity = [np.zeros_like(p) for p in model.parameters()]
    dtype = model.dtype
    lr, mom = dtype.type(params.lr), dtype.type(params.momentum)
    loss_curve = []
    for epoch in range(params.epochs):
        order = rng.permutation(len(labels))
        total, count = 0.0, 0
        for start in range(0, len(order), params.batch_size):
            idx = order[start:start + params.batch_size]
            loss, _ = model.loss_and_grads(patches[idx], labels[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            for p, g, v in zip(model.parameters(), model.gradients(), velocity):
                v *= mom
                v -= lr * g.astype(dtype, copy=False)
                p += v
            total += loss * len(idx)
            count += len(idx)
        loss_curve.append(total / count)
        log.info("epoch %d loss %.5f", epoch + 1, loss_curve[-1])
    model.metadata.update(seed=seed, epochs=params.epochs, loss_curve=loss_curve,
                          hyperparams={k: v for k, v in asdict(params).items() if k != "architecture"})
    return model


def accuracy(model: ClassifierModel, patches, labels) -> float:
    p = model.predict_batch(patches)
    return float(np.mean((p > 0.5) == (np.asarray(labels) == 1)))


def gradient_check(model: ClassifierModel, patch, label: int, n_params: int = 100,
                   step: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy of the model. ``n_params`` parameter entries are
    drawn at random across all tensors; relative error is
    ``|g_a - g_n| / max(|g_a|, |g_n|, floor)``.
    """
    m = model.astype(np.float64)
    x = np.asarray(patch)[None]
    y = np.array([label])
    m.loss_and_grads(x, y)
    analytic = [g.copy() for g in m.gradients()]
    if not all(np.all(np.isfinite(g)) for g in analytic):
        raise NumericalError("non-finite analytic gradient")
    params = m.parameters()
    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(sizes.sum(), size=min(n_params, sizes.sum()), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    for fi in flat_idx:
        t = int(np.searchsorted(offsets, fi, side="right") - 1)
        p = params[t].reshape(-1)
        k = fi - offsets[t]
        orig = p[k]
        p[k] = orig + step
        lp, _ = m.loss_and_grads(x, y)
        p[k] = orig - step
        lm, _ = m.loss_and_grads(x, y)
        p[k] = orig
        numeric = (lp - lm) / (2.0 * step)
        a = analytic[t].reshape(-1)[k]
        if not np.isfinite(numeric):
            raise NumericalError("non-finite numerical gradient")
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, rel)
    m.loss_and_grads(x, y)
    return float(worst)
