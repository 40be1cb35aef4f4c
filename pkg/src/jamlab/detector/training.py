"""Mini-batch SGD with momentum, and split evaluation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, TrainingError
from . import network
from .metrics import MetricsReport, classification_report
from .network import PARAM_ORDER, DetectorModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.003
    momentum: float = 0.9
    batch_size: int = 8
    shuffle_seed: int = 0
    dropout_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    min_batch_loss: float
    n_examples: int


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.mean_loss for e in self.epochs]

    @property
    def final_loss(self):
        return self.epochs[-1].mean_loss

    @property
    def min_loss(self):
        return min(self.losses)

    def to_rows(self):
        return [asdict(e) for e in self.epochs]


class SGD:
    """``v <- momentum * v + grad``; ``param <- param - lr * v``."""

    def __init__(self, model: DetectorModel, learning_rate, momentum=0.0):
        self.model = model
        self.lr = model.dtype.type(learning_rate)
        self.momentum = model.dtype.type(momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in model.params.items()}

    def step(self, grads):
        if self.lr == 0:
            return
        for name in PARAM_ORDER:
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            self.model.params[name] -= self.lr * v
        self.model.bump()


def batch_seed(base, epoch, batch):
    return np.random.SeedSequence([int(base), int(epoch), int(batch)])


def train_arrays(model: DetectorModel, X, y, cfg: TrainConfig, on_epoch=None):
    """Train in place on in-memory normalised grids ``X`` with labels ``y``."""
    X = np.asarray(X)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")

    def batches(epoch):
        order = np.random.default_rng(batch_seed(cfg.shuffle_seed, epoch, 0)).permutation(len(y))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            yield X[idx], y[idx]

    return _fit(model, batches, cfg, on_epoch)


def train(model: DetectorModel, manifest, cfg: TrainConfig, on_epoch=None):
    """Train in place on the manifest's ``train`` split, streaming grids from disk."""
    from ..dataset import iterate_split

    if not manifest.records_in("train"):
        raise TrainingError("training split is empty")

    def batches(epoch):
        seed = int(batch_seed(cfg.shuffle_seed, epoch, 0).generate_state(1)[0])
        yield from iterate_split(manifest, "train", cfg.batch_size, shuffle_seed=seed)

    return _fit(model, batches, cfg, on_epoch)


def _fit(model, batches, cfg, on_epoch):
    opt = SGD(model, cfg.learning_rate, cfg.momentum)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        total, count, min_batch = 0.0, 0, np.inf
        for b, (xb, yb) in enumerate(batches(epoch)):
            seed = batch_seed(cfg.dropout_seed, epoch, b)
            prob, cache = network.forward(model, xb, "train", dropout_seed=seed)
            batch_loss = network.loss(prob, yb)
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            opt.step(network.backward(model, cache, yb))
            if not model.is_finite():
                raise TrainingError(f"non-finite parameters at epoch {epoch + 1}, batch {b}")
            total += batch_loss * len(yb)
            count += len(yb)
            min_batch = min(min_batch, batch_loss)
        stats = EpochStats(epoch + 1, total / count, float(min_batch), count)
        history.epochs.append(stats)
        log.info("epoch %d  loss %.6f", stats.epoch, stats.mean_loss)
        if on_epoch is not None:
            on_epoch(stats)
    return model, history


def evaluate_arrays(model: DetectorModel, X, y, threshold=0.5) -> MetricsReport:
    prob = network.predict_proba(model, X)
    return classification_report(y, prob, threshold, network.loss(prob, y))


def evaluate(model: DetectorModel, manifest, split="test", threshold=0.5) -> MetricsReport:
    from ..dataset import iterate_split

    probs, labels = [], []
    for xb, yb in iterate_split(manifest, split, batch_size=16):
        probs.append(network.forward(model, xb, "eval")[0])
        labels.append(yb)
    if not labels:
        raise ConfigurationError(f"split {split!r} is empty")
    prob = np.concatenate(probs)
    y = np.concatenate(labels)
    return classification_report(y, prob, threshold, network.loss(prob, y))
