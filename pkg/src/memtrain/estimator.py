"""scikit-learn style classifier around the mixed-precision trainer."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .harness.config import bundled_config, load_config
from .harness.data import Dataset
from .netcore import build_model
from .trainer import build_state, predict_logits, run_training


class CrossbarClassifier(ClassifierMixin, BaseEstimator):
    """Train a preset network on simulated crossbars.

    ``X`` holds raw pixels (0..255), either flattened (``n x C*H*W``) or as
    ``n x C x H x W``. Hardware settings come from ``config`` (a path) or the
    bundled config of ``model``; the keyword arguments override its trainer
    section.
    """

    def __init__(self, model="lenet", mode="mixed", config=None, max_epochs=5, batch_size=64,
                 batches_per_epoch=400, lr=0.004, validation_fraction=0.1, inference="auto", seed=0):
        self.model = model
        self.mode = mode
        self.config = config
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.batches_per_epoch = batches_per_epoch
        self.lr = lr
        self.validation_fraction = validation_fraction
        self.inference = inference
        self.seed = seed

    def _images(self, X, shape):
        X = np.asarray(X)
        if X.ndim == 2:
            if X.shape[1] != int(np.prod(shape)):
                raise ValueError(f"expected {int(np.prod(shape))} features per sample, got {X.shape[1]}")
            X = X.reshape((-1,) + tuple(shape))
        if tuple(X.shape[1:]) != tuple(shape):
            raise ValueError(f"expected samples of shape {tuple(shape)}, got {X.shape[1:]}")
        if X.size and (X.min() < 0 or X.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        return np.rint(X).astype(np.uint8)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True)
        check_classification_targets(y)
        cfg = load_config(self.config or bundled_config(self.model))
        net = build_model(self.model)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) > net.num_classes:
            raise ValueError(f"{len(self.classes_)} classes but the network has {net.num_classes} outputs")
        imgs = self._images(X, net.input_shape)
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(y_idx))
        n_val = max(1, int(round(self.validation_fraction * len(order))))
        val, tr = order[:n_val], order[n_val:]
        if len(tr) < self.batch_size:
            raise ValueError(f"need at least {self.batch_size + n_val} samples, got {len(order)}")
        tc = replace(cfg.trainer, mode=self.mode, max_epochs=self.max_epochs, batch_size=self.batch_size,
                     batches_per_epoch=self.batches_per_epoch, lr=self.lr, test_subset=None)
        self.state_ = build_state(net, tc, cfg.device, cfg.tile, self.seed)
        self.history_ = run_training(self.state_, Dataset(imgs[tr], y_idx[tr]), Dataset(imgs[val], y_idx[val]))
        self.n_features_in_ = int(np.prod(net.input_shape))
        return self

    def _mode(self):
        if self.inference != "auto":
            return self.inference
        return "cim" if self.state_.uses_cim else "reference"

    def decision_function(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, allow_nd=True)
        imgs = self._images(X, self.state_.model.input_shape).astype(np.float32) / np.float32(255.0)
        logits = predict_logits(self.state_, imgs, self._mode(), np.random.default_rng(self.seed))
        return logits[:, : len(self.classes_)]

    def predict_proba(self, X):
        z = self.decision_function(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
