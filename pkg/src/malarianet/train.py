"""Adam optimization, the epoch loop, and the two monitoring callbacks.

Per-epoch order: run the train epoch, run the validation epoch, append the
history row, then apply the plateau update followed by the early-stop
update — so an epoch that triggers stopping cannot also burn an LR cut.
Both callbacks monitor validation loss. Everything is deterministic given
(config seed, data): shuffling, augmentation, and dropout draws all derive
from the seed and epoch number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .data import AugmentConfig, DatasetIndex, batches
from .exceptions import ArgumentError, NumericError
from .tensor import GradTape, ParamTensor, Tensor


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 30
    batch_size: int = 32
    es_patience: int = 5
    es_min_delta: float = 0.0
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    min_lr: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ArgumentError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.plateau_factor < 1):
            raise ArgumentError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.es_patience < 1 or self.plateau_patience < 1:
            raise ArgumentError("patience values must be >= 1")


class AdamState:
    """Per-parameter moment estimates, keyed by parameter name."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: Iterable[ParamTensor], state: AdamState, lr: float) -> None:
    """One Adam update over trainable params, reading each ``param.grad``.

    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    params = [p for p in params if p.trainable]
    for p in params:
        if not np.all(np.isfinite(p.grad.data)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad.data.astype(np.float64, copy=False)
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros(p.value.shape, dtype=np.float64)
            state.v[p.name] = np.zeros(p.value.shape, dtype=np.float64)
        v = state.v[p.name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.assign(p.value.data - update.astype(p.value.data.dtype, copy=False))


@dataclass
class CallbackState:
    current_lr: float
    best_monitor: float = math.inf
    best_weights: Optional[dict] = None
    epochs_since_improve_es: int = 0
    epochs_since_improve_lr: int = 0
    stopped: bool = False


def plateau_update(cb: CallbackState, val_loss: float, cfg: TrainConfig) -> CallbackState:
    """Cut the learning rate after plateau_patience epochs without improvement.

    Reads cb.best_monitor but never writes it; run this before the
    early-stop update so both callbacks compare against the previous best.
    """
    if val_loss < cb.best_monitor - cfg.es_min_delta:
        cb.epochs_since_improve_lr = 0
    else:
        cb.epochs_since_improve_lr += 1
        if cb.epochs_since_improve_lr >= cfg.plateau_patience:
            cb.current_lr = max(cb.current_lr * cfg.plateau_factor, cfg.min_lr)
            cb.epochs_since_improve_lr = 0
    return cb


def early_stop_update(
    cb: CallbackState, val_loss: float, cfg: TrainConfig, model=None
) -> CallbackState:
    """Snapshot on improvement; stop (and restore) after es_patience misses."""
    if val_loss < cb.best_monitor - cfg.es_min_delta:
        cb.best_monitor = val_loss
        cb.epochs_since_improve_es = 0
        if model is not None:
            cb.best_weights = model.snapshot()
    else:
        cb.epochs_since_improve_es += 1
        if cb.epochs_since_improve_es >= cfg.es_patience:
            cb.stopped = True
            if model is not None and cb.best_weights is not None:
                model.restore(cb.best_weights)
    return cb


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")

    def append(self, **kwargs):
        assert set(kwargs) == set(self.COLUMNS)
        self.rows.append(kwargs)

    def column(self, name) -> list:
        return [row[name] for row in self.rows]

    def to_csv(self, path) -> None:
        # 6 significant digits, UTF-8, LF
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            cells = [str(row["epoch"])] + [f"{row[c]:.6g}" for c in self.COLUMNS[1:]]
            lines.append(",".join(cells))
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("utf-8"))


def run_epoch(
    model,
    data_stream: Iterable[tuple[Tensor, np.ndarray]],
    adam: Optional[AdamState],
    mode: str,
    lr: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    """One pass over the stream; returns example-weighted (loss, accuracy).

    Train mode runs forward/backward/step per batch; eval mode is a pure
    forward in infer layer mode (no parameter or BN running-stat mutation).
    """
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and adam is None:
        raise ArgumentError("train mode needs an AdamState")
    total_loss = 0.0
    total_correct = 0
    total_seen = 0
    for x, labels in data_stream:
        n = x.shape[0]
        if mode == "train":
            with GradTape() as tape:
                tape.watch_all(model.parameters())
                logits = model.logits(x, mode="train", rng=rng)
                loss = T.sparse_ce_loss(logits, labels)
                if not math.isfinite(loss.item()):
                    raise NumericError(f"non-finite training loss {loss.item()!r}")
                T.backward(tape, loss)
            adam_step(model.parameters(), adam, lr)
        else:
            logits = model.logits(x, mode="infer")
            loss = T.sparse_ce_loss(logits, labels)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite eval loss {loss.item()!r}")
        preds = logits.data.argmax(axis=1)
        total_loss += loss.item() * n
        total_correct += int((preds == labels).sum())
        total_seen += n
    if total_seen == 0:
        raise ArgumentError("empty data stream")
    return total_loss / total_seen, total_correct / total_seen


def fit(
    model,
    train_idx: DatasetIndex,
    val_idx: DatasetIndex,
    cfg: TrainConfig,
    augment_cfg: Optional[AugmentConfig] = None,
) -> tuple[History, object]:
    """Full training loop; returns (History, best-weights model).

    On an error mid-run the partial history is attached to the raised
    exception as ``partial_history`` before propagating.
    """
    aug = augment_cfg or AugmentConfig(seed=cfg.seed)

    def train_stream(epoch):
        return batches(
            train_idx,
            batch_size=cfg.batch_size,
            shuffle=True,
            seed=cfg.seed,
            augmenting=True,
            augment_cfg=aug,
            epoch=epoch,
        )

    def val_stream(epoch):
        return batches(val_idx, batch_size=cfg.batch_size)

    return fit_streams(model, train_stream, val_stream, cfg)


def fit_streams(model, train_stream, val_stream, cfg: TrainConfig) -> tuple[History, object]:
    """The fit loop over stream factories (epoch -> iterable of batches)."""
    adam = AdamState()
    cb = CallbackState(current_lr=cfg.lr)
    history = History()
    try:
        for epoch in range(1, cfg.epochs + 1):
            drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 23]))
            tr_loss, tr_acc = run_epoch(
                model, train_stream(epoch), adam, "train", lr=cb.current_lr, rng=drop_rng
            )
            va_loss, va_acc = run_epoch(model, val_stream(epoch), None, "eval")
            history.append(
                epoch=epoch,
                train_loss=tr_loss,
                train_acc=tr_acc,
                val_loss=va_loss,
                val_acc=va_acc,
                lr=cb.current_lr,
            )
            plateau_update(cb, va_loss, cfg)
            early_stop_update(cb, va_loss, cfg, model)
            if cb.stopped:
                break
    except Exception as exc:
        exc.partial_history = history
        raise
    if cb.best_weights is not None:
        model.restore(cb.best_weights)
    return history, model
