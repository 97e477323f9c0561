"""Frozen-encoder evaluation: feature extraction, linear probe and embedding export."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn.layers import Encoder, images_to_tensor
from .nn.optim import adamw_step, AdamWState
from .nn.tensor import no_grad


def parameter_hash(module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def extract_features(encoder: Encoder, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Average-pooled encoder features of uint8 NHWC images, float32 ``(n, feature_dim)``."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected uint8 NHWC RGB images, got shape {images.shape}")
    if len(images) == 0:
        return np.zeros((0, encoder.feature_dim), np.float32)
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out.append(encoder(images_to_tensor(images[start:start + batch_size])).data)
    return np.concatenate(out).astype(np.float32)


@dataclass
class ProbeResult:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    classes: np.ndarray
    n_train: int
    n_test: int
    epochs_run: int
    predictions: np.ndarray


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(features: np.ndarray, labels: np.ndarray, train_idx: np.ndarray, test_idx: np.ndarray, *,
                lr: float = 1e-2, weight_decay: float = 1e-4, max_epochs: int = 500,
                tol: float = 1e-4) -> ProbeResult:
    """Multinomial logistic regression on frozen features, full-batch AdamW in float64.

    Training stops when the gradient norm of the mean cross-entropy drops
    below ``tol`` or after ``max_epochs`` full-batch steps.  Features are used
    as given.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    test_idx = np.asarray(test_idx, dtype=np.int64)
    if np.intersect1d(train_idx, test_idx).size:
        raise ValueError("train and test indices overlap")
    classes = np.unique(labels[np.concatenate([train_idx, test_idx])])
    train_classes = np.unique(labels[train_idx])
    if len(train_classes) < 2:
        raise ValueError("probe training needs at least two classes")
    y = np.searchsorted(classes, labels)
    x_tr, y_tr = features[train_idx], y[train_idx]
    n, d = x_tr.shape
    k = len(classes)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_tr] = 1.0
    params = {"weight": np.zeros((d, k)), "bias": np.zeros(k)}
    state = AdamWState(lr=lr, weight_decay=weight_decay)
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        p = _softmax(x_tr @ params["weight"] + params["bias"])
        delta = (p - onehot) / n
        grads = {"weight": x_tr.T @ delta, "bias": delta.sum(axis=0)}
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        if norm < tol:
            break
        adamw_step(params, grads, state)
    pred = np.argmax(features[test_idx] @ params["weight"] + params["bias"], axis=1)
    truth = y[test_idx]
    confusion = np.zeros((k, k), np.int64)
    np.add.at(confusion, (truth, pred), 1)
    row = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), row, out=np.full(k, np.nan), where=row > 0)
    accuracy = float(np.trace(confusion) / max(1, len(test_idx)))
    return ProbeResult(accuracy, per_class, confusion, classes, len(train_idx), len(test_idx), epochs,
                       classes[pred])


def export_embeddings(features: np.ndarray, labels: np.ndarray, path: str | os.PathLike) -> Path:
    """CSV, one row per sample: label, then features at 9 significant digits."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if len(features) != len(labels):
        raise ValueError("features and labels differ in length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(features.shape[1])])
        for lab, row in zip(labels, features):
            writer.writerow([str(lab)] + [f"{v:.9g}" for v in row])
    os.replace(tmp, path)
    return path


def read_embeddings(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    labels = np.array([r[0] for r in rows])
    if all(lab.lstrip("-").isdigit() for lab in labels):
        labels = labels.astype(np.int64)
    feats = np.array([[float(v) for v in r[1:]] for r in rows]) if rows else np.zeros((0, 0))
    return feats, labels
