"""
Fully-connected ReLU regression network trained with mini-batch SGD and
momentum on normalized features and targets.

Tuning protocol (``train_mlp``):

1. hold out a validation split and fit the normalizer on the rest;
2. pick the learning rate from ``lr_grid`` by final training MSE, with no
   regularization;
3. with that rate, grid-search dropout and weight decay by validation MAPE,
   keeping the best-validation checkpoint of every run.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import List, Tuple

import numpy as np

from ..features import NormalizationStats, fit_normalizer
from .metrics import mape

log = logging.getLogger(__name__)


@dataclass
class MlpConfig:
    hidden: Tuple[int, ...] = (200,)
    epochs: int = 200
    batch_size: int = 32
    momentum: float = 0.9
    lr_grid: Tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5)
    dropout_grid: Tuple[float, ...] = (0.0, 0.1, 0.2)
    weight_decay_grid: Tuple[float, ...] = (0.0, 1e-4, 1e-3)
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for p in self.dropout_grid:
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout rate {p} outside [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class MlpModel:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    stats: NormalizationStats
    dropout_rate: float = 0.0
    weight_decay: float = 0.0
    learning_rate: float = 1e-3
    history: dict = field(default_factory=dict)

    family = "mlp"

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_features(self) -> int:
        return len(self.stats.keep)

    def predict(self, X) -> np.ndarray:
        return predict_mlp(self, X)

    def _state(self):
        meta = {"dropout_rate": self.dropout_rate, "weight_decay": self.weight_decay,
                "learning_rate": self.learning_rate, "n_layers": len(self.weights),
                "target_mean": self.stats.target_mean, "target_std": self.stats.target_std}
        arrays = {"mean": self.stats.mean, "std": self.stats.std,
                  "keep": self.stats.keep.astype(np.float64)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"], arrays[f"b{i}"] = w, b
        return meta, arrays

    @classmethod
    def _from_state(cls, meta, arrays):
        stats = NormalizationStats(arrays["mean"], arrays["std"], arrays["keep"] > 0.5,
                                   meta["target_mean"], meta["target_std"])
        n = meta["n_layers"]
        return cls([arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)],
                   stats, meta["dropout_rate"], meta["weight_decay"], meta["learning_rate"])


def init_params(sizes, rng):
    """He-normal weights, zero biases."""
    weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return weights, biases


def forward(weights, biases, X, dropout=0.0, rng=None):
    """Network output ``(n,)`` and the activations/dropout masks for backprop."""
    acts, masks = [X], []
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        if i == last:
            return z[:, 0], (acts, masks)
        h = np.maximum(z, 0.0)
        if dropout > 0 and rng is not None:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)


def loss_and_grads(weights, biases, X, y, weight_decay=0.0, dropout=0.0, rng=None):
    """Mean squared error plus ``weight_decay/2 * sum ||W||^2`` and its gradients."""
    out, (acts, masks) = forward(weights, biases, X, dropout, rng)
    n = X.shape[0]
    err = out - y
    loss = np.mean(err ** 2) + 0.5 * weight_decay * sum(np.sum(W * W) for W in weights)
    delta = (2.0 / n) * err[:, None]
    gW, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta + weight_decay * weights[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0)
    return loss, gW, gb


def _fit(Xn, yn, sizes, lr, dropout, weight_decay, cfg, seed, val=None):
    """One SGD run. ``val`` is ``(X_norm, y_raw, stats)`` for checkpointing on
    validation MAPE; without it the final parameters are returned."""
    # divergence is detected from the epoch loss below
    with np.errstate(over="ignore", invalid="ignore"):
        return _sgd(Xn, yn, sizes, lr, dropout, weight_decay, cfg, seed, val)


def _sgd(Xn, yn, sizes, lr, dropout, weight_decay, cfg, seed, val):
    rng = np.random.default_rng(seed)
    weights, biases = init_params(sizes, rng)
    vW = [np.zeros_like(W) for W in weights]
    vb = [np.zeros_like(b) for b in biases]
    n = Xn.shape[0]
    best = (np.inf, None)
    train_loss = np.inf
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, gW, gb = loss_and_grads(weights, biases, Xn[idx], yn[idx],
                                          weight_decay, dropout, rng)
            total += loss * len(idx)
            for i in range(len(weights)):
                vW[i] = cfg.momentum * vW[i] - lr * gW[i]
                vb[i] = cfg.momentum * vb[i] - lr * gb[i]
                weights[i] += vW[i]
                biases[i] += vb[i]
        train_loss = total / n
        if not np.isfinite(train_loss):
            raise FloatingPointError(f"diverged at epoch {epoch} (lr={lr})")
        if val is not None:
            Xv, yv, stats = val
            pred = stats.inverse_target(forward(weights, biases, Xv)[0])
            score = mape(pred, yv)
            if score < best[0]:
                best = (score, ([W.copy() for W in weights], [b.copy() for b in biases]))
    if val is None:
        out, _ = forward(weights, biases, Xn)
        final = float(np.mean((out - yn) ** 2))
        if not np.isfinite(final):
            raise FloatingPointError(f"non-finite training MSE (lr={lr})")
        return final, (weights, biases)
    return best


def train_mlp(X, y, config: MlpConfig = None) -> MlpModel:
    cfg = config or MlpConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n))) if cfg.val_fraction > 0 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if n_val == 0:
        val_idx = tr_idx

    stats = fit_normalizer(X[tr_idx], y[tr_idx])
    Xtr, ytr = stats.transform(X[tr_idx]), stats.transform_target(y[tr_idx])
    Xval, yval = stats.transform(X[val_idx]), y[val_idx]
    sizes = [Xtr.shape[1], *cfg.hidden, 1]

    lr_scores = {}
    for lr in cfg.lr_grid:
        try:
            lr_scores[lr] = _fit(Xtr, ytr, sizes, lr, 0.0, 0.0, cfg, cfg.seed + 1)[0]
        except FloatingPointError as exc:
            log.info("mlp: skipping lr=%g (%s)", lr, exc)
    if not lr_scores:
        raise FloatingPointError("every learning rate diverged")
    lr = min(lr_scores, key=lr_scores.get)

    best = (np.inf, None, None)
    for p in cfg.dropout_grid:
        for wd in cfg.weight_decay_grid:
            try:
                score, params = _fit(Xtr, ytr, sizes, lr, p, wd, cfg, cfg.seed + 2,
                                     val=(Xval, yval, stats))
            except FloatingPointError as exc:
                log.info("mlp: skipping dropout=%g wd=%g (%s)", p, wd, exc)
                continue
            log.debug("mlp: lr=%g dropout=%g wd=%g val MAPE %.4f", lr, p, wd, score)
            if score < best[0]:
                best = (score, params, (p, wd))
    if best[1] is None:
        raise FloatingPointError("every regularization setting diverged")
    (weights, biases), (p, wd) = best[1], best[2]
    history = {"lr_train_mse": {str(k): v for k, v in lr_scores.items()}, "val_mape": best[0]}
    return MlpModel(weights, biases, stats, p, wd, lr, history)


def predict_mlp(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    out, _ = forward(model.weights, model.biases, model.stats.transform(X))
    return model.stats.inverse_target(out)
