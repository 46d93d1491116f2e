"""scikit-learn-style facade over the full pipeline.

``CellImageClassifier`` follows the estimator protocol — constructor params
stored verbatim, ``get_params``/``set_params``, ``fit`` returning self,
fitted attributes carrying a trailing underscore — so the classifier drops
into pipelines, grid search, and anything else duck-typed against sklearn.

    clf = CellImageClassifier(epochs=5, random_state=0)
    clf.fit(images, labels)           # images: (N, 3, 224, 224) in [0, 1]
    probs = clf.predict_proba(images)
    clf.save("model.mckp")
"""

from __future__ import annotations

import inspect

import numpy as np

from . import checkpoint as ckpt
from .data import AugmentConfig, augment
from .exceptions import ArgumentError, NotFittedError
from .model import build_model
from .tensor import Tensor
from .train import TrainConfig, fit_streams
from .validation import check_image_batch, check_labels


class CellImageClassifier:
    """Binary malaria-cell classifier with an sklearn-style interface.

    Parameters mirror the training configuration: Adam learning rate,
    epoch budget, batch size, early-stopping and LR-plateau patience, the
    augmentation ranges, and the fraction of ``fit`` data held out as the
    validation monitor.
    """

    def __init__(
        self,
        lr: float = 0.001,
        epochs: int = 30,
        batch_size: int = 32,
        es_patience: int = 5,
        es_min_delta: float = 0.0,
        plateau_factor: float = 0.1,
        plateau_patience: int = 3,
        min_lr: float = 1e-6,
        validation_fraction: float = 0.2,
        augment: bool = True,
        rotation_deg: float = 15.0,
        zoom_range: tuple = (0.9, 1.1),
        hflip_prob: float = 0.5,
        random_state: int = 0,
    ):
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.es_patience = es_patience
        self.es_min_delta = es_min_delta
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.min_lr = min_lr
        self.validation_fraction = validation_fraction
        self.augment = augment
        self.rotation_deg = rotation_deg
        self.zoom_range = zoom_range
        self.hflip_prob = hflip_prob
        self.random_state = random_state

    # -- sklearn protocol ----------------------------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "CellImageClassifier":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ArgumentError(
                    f"invalid parameter {name!r} for CellImageClassifier; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    # -- internals -----------------------------------------------------------

    def _build_model(self, seed: int):
        return build_model(seed=seed)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            es_patience=self.es_patience,
            es_min_delta=self.es_min_delta,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            min_lr=self.min_lr,
            seed=self.random_state,
        )

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this CellImageClassifier is not fitted yet; call fit first"
            )

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y) -> "CellImageClassifier":
        X = check_image_batch(X)
        y = check_labels(y, X.shape[0])
        n = X.shape[0]

        # deterministic holdout for the validation monitor
        n_val = int(np.floor(self.validation_fraction * n + 1e-9))
        perm = np.random.default_rng(self.random_state).permutation(n)
        if n_val >= 1 and n - n_val >= 1:
            val_ids, train_ids = perm[:n_val], perm[n_val:]
        else:  # too little data to hold anything out: monitor the train set
            val_ids, train_ids = perm, perm

        x_tr, y_tr = X[train_ids], y[train_ids]
        x_va, y_va = X[val_ids], y[val_ids]
        cfg = self._train_config()
        aug_cfg = AugmentConfig(
            rotation_deg=self.rotation_deg,
            zoom_range=tuple(self.zoom_range),
            hflip_prob=self.hflip_prob,
            seed=self.random_state,
        )

        def train_stream(epoch):
            order_rng = np.random.default_rng(
                np.random.SeedSequence([self.random_state, epoch])
            )
            order = order_rng.permutation(len(train_ids))
            aug_rng = np.random.default_rng(
                np.random.SeedSequence([self.random_state, epoch, 17])
            )
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start : start + cfg.batch_size]
                xb = x_tr[chunk]
                if self.augment:
                    xb = np.stack(
                        [augment(Tensor(img), aug_cfg, aug_rng).data for img in xb]
                    )
                yield Tensor(xb), y_tr[chunk]

        def val_stream(epoch):
            for start in range(0, len(val_ids), cfg.batch_size):
                yield (
                    Tensor(x_va[start : start + cfg.batch_size]),
                    y_va[start : start + cfg.batch_size],
                )

        model = self._build_model(seed=self.random_state)
        history, model = fit_streams(model, train_stream, val_stream, cfg)

        self.model_ = model
        self.classes_ = np.array([0, 1])
        self.class_names_ = list(model.class_names)
        self.history_ = history
        self.n_features_in_ = X.shape[1] * X.shape[2] * X.shape[3]
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_image_batch(X)
        out = []
        for start in range(0, X.shape[0], self.batch_size):
            batch = Tensor(X[start : start + self.batch_size])
            out.append(self.model_.forward(batch, mode="infer").data)
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y) -> float:
        X = check_image_batch(X)
        y = check_labels(y, X.shape[0])
        return float((self.predict(X) == y).mean())

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        ckpt.save(self.model_, path, config=self.get_params())

    def load_model(self, path) -> "CellImageClassifier":
        """Attach a trained model from a checkpoint to this estimator."""
        self.model_ = ckpt.load(path, model_factory=lambda seed, dtype: self._build_model(seed))
        self.classes_ = np.array([0, 1])
        self.class_names_ = list(self.model_.class_names)
        return self
