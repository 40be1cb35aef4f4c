"""scikit-learn compatible wrapper around the convolutional detector."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from ..errors import InputError
from . import network
from .checkpoint import load_model, save_model
from .network import DetectorModel, NetworkSpec
from .training import TrainConfig, evaluate_arrays, train_arrays


def check_grids(X, spec: NetworkSpec | None = None):
    """Validate an ``(n, C, H, W)`` stack of finite grids."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise InputError(f"expected an (n, C, H, W) array, got shape {X.shape}")
    if X.shape[0] == 0:
        raise InputError("no samples given")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float32)
    if not np.isfinite(X).all():
        raise InputError("grids contain non-finite values")
    if spec is not None:
        want = (spec.in_channels, spec.input_size, spec.input_size)
        if X.shape[1:] != want:
            raise InputError(f"expected grids of shape {want}, got {X.shape[1:]}")
    return X


class JammingDetector(ClassifierMixin, BaseEstimator):
    """Binary jammed/clean classifier over normalised feature grids.

    Parameters mirror :class:`NetworkSpec` and :class:`TrainConfig`; the
    input size is taken from the data at ``fit`` time when ``input_size`` is
    None. Fitted attributes: ``model_``, ``history_``, ``classes_``.
    """

    def __init__(self, input_size=None, conv_channels=(16, 32), kernel_size=7, hidden_units=(256, 84),
                 dropout=0.2, epochs=50, learning_rate=0.003, momentum=0.9, batch_size=8,
                 init_seed=0, shuffle_seed=0, dropout_seed=0, threshold=0.5, dtype="float32"):
        self.input_size = input_size
        self.conv_channels = conv_channels
        self.kernel_size = kernel_size
        self.hidden_units = hidden_units
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed
        self.dropout_seed = dropout_seed
        self.threshold = threshold
        self.dtype = dtype

    def network_spec(self, n_channels=3, size=None):
        size = self.input_size if self.input_size is not None else size
        return NetworkSpec(in_channels=n_channels, conv1_channels=self.conv_channels[0],
                           conv2_channels=self.conv_channels[1], kernel_size=self.kernel_size,
                           input_size=size, fc1_units=self.hidden_units[0],
                           fc2_units=self.hidden_units[1], dropout_p=self.dropout)

    def train_config(self):
        return TrainConfig(self.epochs, self.learning_rate, self.momentum, self.batch_size,
                           self.shuffle_seed, self.dropout_seed)

    def fit(self, X, y, on_epoch=None):
        X = check_grids(X)
        y = np.asarray(y).astype(np.int64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise InputError(f"{X.shape[0]} grids but {y.shape[0]} labels")
        labels = unique_labels(y)
        if not set(labels) <= {0, 1}:
            raise InputError(f"labels must be 0/1, got {labels}")
        if X.shape[2] != X.shape[3]:
            raise InputError("grids must be square")
        spec = self.network_spec(X.shape[1], X.shape[2])
        check_grids(X, spec)
        self.model_ = DetectorModel(spec, self.init_seed, np.dtype(self.dtype))
        self.model_, self.history_ = train_arrays(self.model_, X.astype(self.model_.dtype, copy=False), y,
                                                  self.train_config(), on_epoch)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_grids(X, self.model_.spec)
        p = network.predict_proba(self.model_, X.astype(self.model_.dtype, copy=False))
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold).astype(np.int64)

    def report(self, X, y):
        check_is_fitted(self, "model_")
        X = check_grids(X, self.model_.spec)
        return evaluate_arrays(self.model_, X, y, self.threshold)

    def save(self, path):
        check_is_fitted(self, "model_")
        save_model(self.model_, path)

    @classmethod
    def from_checkpoint(cls, path, **params):
        model = load_model(path)
        s = model.spec
        est = cls(input_size=s.input_size, conv_channels=(s.conv1_channels, s.conv2_channels),
                  kernel_size=s.kernel_size, hidden_units=(s.fc1_units, s.fc2_units),
                  dropout=s.dropout_p, init_seed=model.init_seed, **params)
        est.model_ = model
        est.classes_ = np.array([0, 1])
        return est
