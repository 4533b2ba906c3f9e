"""Scikit-learn style estimator wrapping the staged training procedure.

`WhatWhereClassifier` behaves like any sklearn classifier (`fit`,
`predict`, `predict_proba`, `score`, `get_params`/`set_params`, cloneable)
while training the full augmented network underneath: optional supervised
pretraining, layer-wise decoder pretraining against the frozen encoder,
stacked decoder finetuning, then joint finetuning at a reduced learning
rate.  `transform` exposes the top pooled features and `reconstruct`
returns the decoder's image reconstructions, so the model drops into
pipelines both as a classifier and as a feature extractor.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import Dataset
from .exceptions import ConfigError
from .layers import ConvSpec
from .network import (
    MacroLayerSpec,
    NetworkConfig,
    build_network,
    forward,
)
from .training import (
    MetricsLog,
    SgdConfig,
    TrainPlan,
    run_step2_layerwise,
    run_step3_stacked,
    run_step4_joint,
)
from .validation import check_images, check_labels


class WhatWhereClassifier(BaseEstimator, ClassifierMixin):
    """Convolutional classifier with a mirrored reconstructive decoder.

    Parameters
    ----------
    variant : {"baseline", "sae-first", "sae-all", "sae-layerwise"}
        Decoder wiring; "baseline" trains a plain classifier.
    switch_mode : {"known", "fixed"}
        Whether unpooling reuses the encoder's pooling switches or scatters
        to a fixed in-window corner.
    hidden_channels : tuple of int
        Output channels of each macro-layer (one conv per macro-layer).
    kernel_size, pool_size : int
        Convolution kernel extent (padding keeps the size) and pooling
        window/stride.
    head_units : tuple of int
        Hidden inner-product widths before the logits layer.
    recon_weight : float
        Weight of the reconstruction objective in the joint loss.
    gamma_target : float
        Per-layer reconstruction terms are rebalanced to this magnitude at
        the start of each phase.
    lr, momentum, weight_decay, batch_size : float / int
        SGD settings for the pretraining phases; joint finetuning runs at
        ``lr * joint_lr_scale`` with ``joint_batch_size``.
    pretrain_epochs, decoder_epochs, joint_epochs : int
        Epoch budgets for supervised pretraining, phases 2 and 3 (each),
        and phase 4.
    input_shape : tuple or None
        (C, H, W) used to fold 2-D inputs; inferred from 3-D/4-D inputs.
    random_state : int
        Seed for initialization, shuffling, and augmentation.
    """

    def __init__(self, variant="sae-all", switch_mode="known",
                 hidden_channels=(8, 16), kernel_size=5, pool_size=2,
                 head_units=(64,), recon_weight=0.05, gamma_target=1.0,
                 lr=0.05, momentum=0.9, weight_decay=0.0, batch_size=32,
                 joint_lr_scale=0.1, joint_batch_size=64,
                 pretrain_epochs=2, decoder_epochs=1, joint_epochs=1,
                 input_shape=None, precision="f32", random_state=0):
        self.variant = variant
        self.switch_mode = switch_mode
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        self.pool_size = pool_size
        self.head_units = head_units
        self.recon_weight = recon_weight
        self.gamma_target = gamma_target
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.joint_lr_scale = joint_lr_scale
        self.joint_batch_size = joint_batch_size
        self.pretrain_epochs = pretrain_epochs
        self.decoder_epochs = decoder_epochs
        self.joint_epochs = joint_epochs
        self.input_shape = input_shape
        self.precision = precision
        self.random_state = random_state

    def _build_config(self, c, h, w, n_classes) -> NetworkConfig:
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd so padding preserves the extent")
        pad = self.kernel_size // 2
        layers = []
        prev = c
        for out_c in self.hidden_channels:
            layers.append(MacroLayerSpec(
                convs=(ConvSpec(prev, out_c, self.kernel_size, self.kernel_size, pad=pad),),
                pool=self.pool_size,
            ))
            prev = out_c
        config = NetworkConfig(
            input_channels=c, input_hw=(h, w),
            macro_layers=tuple(layers),
            num_classes=n_classes,
            head_units=tuple(self.head_units),
            variant=self.variant, switch_mode=self.switch_mode,
            recon_weight=self.recon_weight,
            layer_loss_weights=tuple(1.0 for _ in layers),
            precision=self.precision,
        )
        config.validate()
        return config

    def _iters(self, n, batch, epochs) -> int:
        return ((n + batch - 1) // batch) * epochs

    def fit(self, X, y):
        X = check_images(X, self.input_shape, dtype=np.float32 if self.precision == "f32" else np.float64)
        y = check_labels(y, X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n, c, h, w = X.shape
        self.config_ = self._build_config(c, h, w, len(self.classes_))
        self.store_ = build_network(self.config_, self.random_state)
        data = Dataset(X, y_idx.astype(np.int64))

        plan = TrainPlan(
            step2=SgdConfig(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                            batch_size=self.batch_size,
                            iterations=self._iters(n, self.batch_size, self.decoder_epochs)),
            step3=SgdConfig(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                            batch_size=self.batch_size,
                            iterations=self._iters(n, self.batch_size, self.decoder_epochs)),
            step4=SgdConfig(lr=self.lr * self.joint_lr_scale, momentum=self.momentum,
                            weight_decay=self.weight_decay, batch_size=self.joint_batch_size,
                            iterations=self._iters(n, self.joint_batch_size, self.joint_epochs)),
            seed=self.random_state, auto_gammas=True, gamma_target=self.gamma_target,
        )
        log = MetricsLog(None, self.config_.depth)

        # supervised pretraining stands in for a pretrained classification
        # network as the starting point of the augmented model
        if self.pretrain_epochs:
            pre_cfg = dataclasses.replace(self.config_, variant="baseline")
            pre_plan = dataclasses.replace(plan, step4=SgdConfig(
                lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                batch_size=self.batch_size,
                iterations=self._iters(n, self.batch_size, self.pretrain_epochs)))
            run_step4_joint(self.store_, pre_cfg, data, pre_plan, log)

        it = len(log.rows)
        if self.variant != "baseline":
            r2 = run_step2_layerwise(self.store_, self.config_, data, plan, log, global_iter=it)
            r3 = run_step3_stacked(self.store_, self.config_, data, plan, log, global_iter=r2.global_iter)
            it = r3.global_iter
        if self.joint_epochs:
            run_step4_joint(self.store_, self.config_, data, plan, log, global_iter=it)
        self.history_ = log.rows
        self.n_features_in_ = c * h * w
        return self

    def _check_fitted(self):
        if not hasattr(self, "store_"):
            raise ConfigError("estimator is not fitted yet; call fit first")

    def _as_images(self, X) -> np.ndarray:
        self._check_fitted()
        c, (h, w) = self.config_.input_channels, self.config_.input_hw
        return check_images(X, (c, h, w), dtype=self.config_.dtype)

    def decision_function(self, X) -> np.ndarray:
        from .evaluation import predict_logits

        return predict_logits(self.store_, self.config_, self._as_images(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def transform(self, X) -> np.ndarray:
        """Top pooled feature maps, flattened to (n_samples, n_features)."""
        X = self._as_images(X)
        record = forward(self.store_, self.config_, X, with_decoder=False)
        top = record.a[self.config_.depth]
        return top.reshape(top.shape[0], -1)

    def reconstruct(self, X) -> np.ndarray:
        """Decoder image reconstructions with the fitted pathway."""
        X = self._as_images(X)
        if self.config_.variant == "baseline":
            raise ConfigError("baseline variant has no decoder to reconstruct with")
        record = forward(self.store_, self.config_, X)
        if self.config_.variant == "sae-layerwise":
            return record.lw_outputs[0]
        return record.a_hat[0]
