"""Posture classifiers: k-nearest neighbours and a small numpy MLP.

Both models carry the standardizer fitted on their training rows and
serialize to a self-describing JSON document.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import N_CLASSES, N_FEATURES, Standardizer

log = logging.getLogger(__name__)

MODEL_FORMAT = "restaware-model"
MODEL_VERSION = 1
HIDDEN_SIZES = (64, 32)
DROPOUT_RATE = 0.3


class NonFiniteLoss(ArithmeticError):
    pass


class ModelFormatError(ValueError):
    pass


# -- k nearest neighbours ---------------------------------------------------

@dataclass(frozen=True)
class KnnModel:
    X: np.ndarray  # standardized training rows
    y: np.ndarray
    k: int = 5
    standardizer: Standardizer | None = None
    n_classes: int = N_CLASSES

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.k > len(self.y):
            raise ValueError(f"k={self.k} exceeds training size {len(self.y)}")


def knn_fit(X_std: np.ndarray, y: np.ndarray, k: int = 5,
            standardizer: Standardizer | None = None) -> KnnModel:
    return KnnModel(np.asarray(X_std, dtype=np.float64), np.asarray(y, dtype=np.int64), k, standardizer)


def knn_predict(model: KnnModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Majority vote of the k nearest training rows (Euclidean).

    Distance ties go to the earlier training row; vote ties to the smaller
    label id. ``x`` must already be standardized.
    """
    d = np.sqrt(((model.X - np.asarray(x, dtype=np.float64)) ** 2).sum(axis=1))
    nearest = np.argsort(d, kind="stable")[: model.k]
    votes = np.bincount(model.y[nearest], minlength=model.n_classes).astype(np.float64)
    fractions = votes / model.k
    return int(np.argmax(fractions)), fractions


def knn_predict_batch(model: KnnModel, X: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64).reshape(-1, model.X.shape[1])
    labels = np.empty(len(X), dtype=np.int64)
    scores = np.empty((len(X), model.n_classes))
    for start in range(0, len(X), chunk):
        block = X[start:start + chunk]
        d = np.sqrt(((block[:, None, :] - model.X[None, :, :]) ** 2).sum(axis=2))
        nearest = np.argsort(d, axis=1, kind="stable")[:, : model.k]
        neighbor_labels = model.y[nearest]
        for i, row in enumerate(neighbor_labels):
            votes = np.bincount(row, minlength=model.n_classes) / model.k
            scores[start + i] = votes
            labels[start + i] = int(np.argmax(votes))
    return labels, scores


# -- multilayer perceptron --------------------------------------------------

@dataclass
class MlpConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    dropout: float = DROPOUT_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # per layer, shape (fan_in, fan_out)
    biases: list[np.ndarray]
    dropout: float = DROPOUT_RATE
    standardizer: Standardizer | None = None

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def mlp_init(n_in: int = N_FEATURES, hidden: Sequence[int] = HIDDEN_SIZES, n_out: int = N_CLASSES,
             seed: int = 0, dropout: float = DROPOUT_RATE) -> MlpModel:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [n_in, *hidden, n_out]
    weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpModel(weights, biases, dropout)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward(model: MlpModel, X: np.ndarray, masks: Sequence[np.ndarray] | None = None):
    """Forward pass; returns (probabilities, cache for backprop).

    ``masks`` are per-hidden-layer inverted-dropout multipliers (already
    divided by the keep probability); None means inference mode.
    """
    h = np.asarray(X, dtype=np.float64)
    cache = [h]
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        z = h @ model.weights[i] + model.biases[i]
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[i]
        cache.append(z)
        cache.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return softmax(logits), cache


def mlp_predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    probs, _ = mlp_forward(model, X)
    return probs


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    p = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


def mlp_loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray,
                       masks: Sequence[np.ndarray] | None = None) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and its gradient, ordered like ``model.params()``."""
    y = np.asarray(y, dtype=np.int64)
    probs, cache = mlp_forward(model, X, masks)
    loss = cross_entropy(probs, y)
    n = len(y)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    n_hidden = len(model.weights) - 1
    grads_w: list[np.ndarray] = [None] * (n_hidden + 1)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * (n_hidden + 1)  # type: ignore[list-item]
    h_last = cache[-1]
    grads_w[-1] = h_last.T @ delta
    grads_b[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1].T
    for i in range(n_hidden - 1, -1, -1):
        z = cache[1 + 2 * i]
        h_in = cache[2 * i]
        if masks is not None:
            upstream = upstream * masks[i]
        dz = upstream * (z > 0)
        grads_w[i] = h_in.T @ dz
        grads_b[i] = dz.sum(axis=0)
        upstream = dz @ model.weights[i].T
    return loss, [g for pair in zip(grads_w, grads_b) for g in pair]


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)


def mlp_train(X_train: np.ndarray, y_train: np.ndarray, X_val: np.ndarray | None = None,
              y_val: np.ndarray | None = None, config: MlpConfig | None = None,
              n_classes: int = N_CLASSES) -> tuple[MlpModel, TrainingHistory]:
    """Mini-batch Adam on cross-entropy with inverted dropout on hidden layers.

    Per-epoch losses are full-pass, dropout-free evaluations.
    """
    cfg = config or MlpConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    model = mlp_init(X_train.shape[1], HIDDEN_SIZES, n_classes, seed=int(rng.integers(2**63)), dropout=cfg.dropout)
    history = TrainingHistory()
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    keep = 1.0 - cfg.dropout
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X_train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = None
            if cfg.dropout > 0:
                masks = [(rng.random((len(idx), h)) < keep) / keep for h in HIDDEN_SIZES]
            loss, grads = mlp_loss_and_grads(model, X_train[idx], y_train[idx], masks)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch}, step {step}")
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * g * g
                m_hat = mi / (1 - cfg.beta1 ** step)
                v_hat = vi / (1 - cfg.beta2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        train_loss = cross_entropy(mlp_predict_proba(model, X_train), y_train)
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(f"non-finite training loss {train_loss} after epoch {epoch}")
        history.train_loss.append(train_loss)
        if X_val is not None and y_val is not None and len(y_val):
            history.validation_loss.append(cross_entropy(mlp_predict_proba(model, X_val), np.asarray(y_val)))
        log.debug("epoch %d train_loss=%.4f", epoch, train_loss)
    return model, history


# -- uniform prediction and serialization -----------------------------------

Model = KnnModel | MlpModel


def predict(model: Model, X_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standardize raw features with the model's params, then return (labels, scores)."""
    X = np.asarray(X_raw, dtype=np.float64)
    if model.standardizer is not None:
        X = model.standardizer.apply(X)
    if isinstance(model, KnnModel):
        return knn_predict_batch(model, X)
    probs = mlp_predict_proba(model, X)
    return probs.argmax(axis=1), probs


def model_to_dict(model: Model, **meta) -> dict:
    doc: dict = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    doc["standardizer"] = model.standardizer.to_dict() if model.standardizer else None
    if isinstance(model, KnnModel):
        doc.update(kind="knn", k=model.k, n_features=int(model.X.shape[1]), n_classes=model.n_classes,
                   rows=model.X.ravel().tolist(), labels=model.y.tolist())
    else:
        doc.update(kind="mlp", dropout=model.dropout, layers=[
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ])
    doc["meta"] = meta
    return doc


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a restaware model document")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    std = Standardizer.from_dict(doc["standardizer"]) if doc.get("standardizer") else None
    kind = doc.get("kind")
    if kind == "knn":
        X = np.asarray(doc["rows"], dtype=np.float64).reshape(-1, doc["n_features"])
        return KnnModel(X, np.asarray(doc["labels"], dtype=np.int64), doc["k"], std, doc.get("n_classes", N_CLASSES))
    if kind == "mlp":
        weights = [np.asarray(layer["weights"], dtype=np.float64).reshape(layer["shape"]) for layer in doc["layers"]]
        biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
        return MlpModel(weights, biases, doc.get("dropout", DROPOUT_RATE), std)
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | Path, **meta) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, **meta)), encoding="utf-8")


def load_model(path: str | Path) -> tuple[Model, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return model_from_dict(doc), doc.get("meta", {})


def fit_and_wrap(kind: str, X_train: np.ndarray, y_train: np.ndarray, X_val: np.ndarray | None = None,
                 y_val: np.ndarray | None = None, k: int = 5, mlp_config: MlpConfig | None = None) -> Model:
    """Fit a standardizer on the raw training rows, then train ``kind`` ("knn" or "mlp") on the result."""
    from .features import fit_standardizer

    std = fit_standardizer(X_train)
    if kind == "knn":
        return knn_fit(std.apply(X_train), y_train, k, std)
    if kind == "mlp":
        X_val_std = std.apply(X_val) if X_val is not None else None
        model, history = mlp_train(std.apply(X_train), y_train, X_val_std, y_val, mlp_config)
        model.standardizer = std
        return model
    raise ValueError(f"unknown model kind {kind!r}")
