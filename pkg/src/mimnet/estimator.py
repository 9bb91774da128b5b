"""Scikit-learn style estimator facade over the segmentation network.

``MimSegmenter`` follows the sklearn contract: ``__init__`` only stores
hyperparameters (so ``get_params``/``set_params``/``clone`` work), ``fit``
validates inputs and trains, fitted state lives in trailing-underscore
attributes, and ``predict``/``score`` operate on plain numpy arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .arch import MimConfig, MimModel
from .data import Sample, _resize
from .metrics import binarize, iou
from .train import TrainConfig, evaluate, predict_probs, train


def check_images(X, image_size: int | None = None, resize: bool = False) -> np.ndarray:
    """Validate an image batch: [N,H,W] or [N,H,W,3], finite, H == W.

    Returns a [N,H,W] uint8 array (channel dimension averaged away; values
    outside [0, 255] are assumed to be [0, 1] floats and rescaled).
    """
    X = np.asarray(X)
    if X.ndim == 4 and X.shape[-1] == 3:
        X = X.mean(axis=-1)
    if X.ndim != 3:
        raise ValueError(f"expected images [N,H,W] or [N,H,W,3], got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if X.shape[1] != X.shape[2]:
        raise ValueError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or Inf")
    if np.issubdtype(X.dtype, np.floating) and X.max() <= 1.0 + 1e-9:
        X = X * 255.0
    X = np.clip(np.round(X), 0, 255).astype(np.uint8)
    if image_size is not None and X.shape[1] != image_size:
        if not resize:
            raise ValueError(
                f"images are {X.shape[1]}x{X.shape[2]} but the model expects "
                f"{image_size}x{image_size}; pass resize=True to rescale")
        X = np.stack([_resize(img, image_size, "bilinear") for img in X])
    return X


def check_masks(y, X: np.ndarray) -> np.ndarray:
    """Validate masks against the image batch; returns [N,H,W] uint8 in {0,1}."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ValueError(f"expected masks [N,H,W], got shape {y.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{y.shape[0]} masks for {X.shape[0]} images")
    vals = np.unique(y)
    if not np.isin(vals, [0, 1, 255]).all():
        raise ValueError(f"masks must be binary (0/1 or 0/255), found values {vals.tolist()}")
    return (y > 0).astype(np.uint8)


class MimSegmenter(BaseEstimator):
    """Infrared small-target segmenter with a fit/predict interface.

    Parameters mirror the model and training configs; see ``MimConfig`` and
    ``TrainConfig`` for semantics.  ``fit(X, y)`` expects square grayscale
    images and binary masks of the configured size (or ``resize=True``).
    """

    def __init__(self, image_size: int = 64, word_dim: int = 8, sentence_dim: int = 32,
                 blocks_per_stage: tuple = (2, 2, 2, 2), word_pixels: int = 2,
                 words_per_sentence_side: int = 4, sentence_init: str = "stem",
                 inner_enabled: bool = True, state_dim: int = 16, precision: str = "double",
                 lr: float = 0.06, weight_decay: float = 0.0004, batch_size: int = 4,
                 epochs: int = 50, threshold: float = 0.5, resize: bool = False,
                 random_state: int = 0):
        self.image_size = image_size
        self.word_dim = word_dim
        self.sentence_dim = sentence_dim
        self.blocks_per_stage = blocks_per_stage
        self.word_pixels = word_pixels
        self.words_per_sentence_side = words_per_sentence_side
        self.sentence_init = sentence_init
        self.inner_enabled = inner_enabled
        self.state_dim = state_dim
        self.precision = precision
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.threshold = threshold
        self.resize = resize
        self.random_state = random_state

    # -- config plumbing -----------------------------------------------------

    def _model_config(self) -> MimConfig:
        return MimConfig(
            input_h=self.image_size, input_w=self.image_size,
            word_dim=self.word_dim, sentence_dim=self.sentence_dim,
            blocks_per_stage=list(self.blocks_per_stage),
            word_pixels=self.word_pixels,
            words_per_sentence_side=self.words_per_sentence_side,
            sentence_init=self.sentence_init, inner_enabled=self.inner_enabled,
            state_dim=self.state_dim, precision=self.precision,
        ).validate()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.random_state).validate()

    def _samples(self, X: np.ndarray, y=None) -> list[Sample]:
        masks = y if y is not None else np.zeros_like(X)
        return [Sample(id=f"array_{i:05d}", image=img, mask=msk)
                for i, (img, msk) in enumerate(zip(X, masks))]

    def _require_fitted(self) -> MimModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("this MimSegmenter instance is not fitted yet; call fit first")
        return model

    # -- sklearn surface ------------------------------------------------------

    def fit(self, X, y):
        cfg = self._model_config()
        X = check_images(X, cfg.input_h, self.resize)
        y = check_masks(y, X)
        if self.resize and y.shape[1] != cfg.input_h:
            y = np.stack([_resize(m * 255, cfg.input_h, "nearest") for m in y]) // 255
        self.model_ = MimModel(cfg, seed=self.random_state)
        result = train(self.model_, self._samples(X, y), self._train_config())
        self.history_ = result.history
        self.n_steps_ = result.steps
        return self

    def predict_prob(self, X) -> np.ndarray:
        model = self._require_fitted()
        X = check_images(X, model.cfg.input_h, self.resize)
        probs = predict_probs(model, self._samples(X), batch_size=self.batch_size)
        return np.stack(probs)

    def predict(self, X) -> np.ndarray:
        return np.stack([binarize(p, self.threshold) for p in self.predict_prob(X)])

    def score(self, X, y) -> float:
        """Dataset-accumulated IoU of thresholded predictions against y."""
        Xv = check_images(X, self._require_fitted().cfg.input_h, self.resize)
        y = check_masks(y, Xv)
        preds = self.predict(X)
        return iou(list(preds), list(y))

    def evaluate(self, X, y):
        """Full metrics report (IoU, nIoU, Pd, Fa, ROC/AUC)."""
        model = self._require_fitted()
        X = check_images(X, model.cfg.input_h, self.resize)
        y = check_masks(y, X)
        return evaluate(model, self._samples(X, y), threshold=self.threshold,
                        batch_size=self.batch_size)
