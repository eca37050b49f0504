"""Recommender-side decoding of perturbed Bloom filters.

:class:`MLPDecoder` is a small numpy multilayer perceptron (ReLU hidden
layers, dropout, softmax output, cross-entropy loss, Adam) following the
scikit-learn classifier API. :class:`ProfileDecoder` fits one decoder per
taxonomy category on the full report vector. Any scikit-learn classifier
with ``predict_proba`` can stand in for the MLP.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bit_matrix, check_bitvector
from .profiles import Profile, Taxonomy

__all__ = [
    "MlpConfig",
    "MLPDecoder",
    "ProfileDecoder",
    "ClassificationReport",
    "classification_report",
    "train",
    "predict",
    "evaluate",
    "decode_profile",
    "save_model",
    "load_model",
]


@dataclass
class MlpConfig:
    input_size: int
    output_size: int
    hidden1_size: int = 60
    hidden2_size: int = 50
    dropout_rate: float = 0.2
    epochs: int = 25
    batch_size: int = 70
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        sizes = (self.input_size, self.output_size, self.hidden1_size, self.hidden2_size)
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")

    def estimator(self) -> "MLPDecoder":
        return MLPDecoder(
            hidden_sizes=(self.hidden1_size, self.hidden2_size),
            dropout=self.dropout_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            n_classes=self.output_size,
            random_state=self.seed,
        )


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MLPDecoder(ClassifierMixin, BaseEstimator):
    """Multiclass MLP trained with mini-batch Adam.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Widths of the ReLU hidden layers.
    dropout : float
        Drop probability applied after every hidden layer while training.
    epochs, batch_size, learning_rate : training schedule.
    beta1, beta2, adam_eps : Adam moment decay rates and denominator offset.
    n_classes : int, optional
        Output width. Defaults to ``max(y) + 1`` so labels are class indices.
    random_state : int
        Seeds initialization, shuffling and dropout masks.
    """

    def __init__(
        self,
        hidden_sizes=(60, 50),
        dropout=0.2,
        epochs=25,
        batch_size=70,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        adam_eps=1e-8,
        n_classes=None,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.n_classes = n_classes
        self.random_state = random_state

    # -- core math ---------------------------------------------------------

    def _init_params(self, n_in, n_out, rng):
        sizes = [n_in, *self.hidden_sizes, n_out]
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return params

    def _forward(self, params, X, rng=None):
        """Returns output probabilities and the cache needed for backprop."""
        cache = []
        a = X
        n_hidden = len(params) // 2 - 1
        for layer in range(n_hidden):
            W, b = params[2 * layer], params[2 * layer + 1]
            z = a @ W + b
            h = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.dropout > 0:
                mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                h = h * mask
            cache.append((a, z, mask))
            a = h
        W, b = params[-2], params[-1]
        probs = _softmax(a @ W + b)
        cache.append((a, None, None))
        return probs, cache

    def _loss_and_grads(self, params, X, Y, rng=None):
        """Mean cross-entropy and its gradient w.r.t. every parameter array.

        ``Y`` is one-hot. Passing ``rng`` enables dropout.
        """
        n = X.shape[0]
        probs, cache = self._forward(params, X, rng)
        loss = -np.sum(Y * np.log(np.clip(probs, 1e-300, None))) / n
        grads = [None] * len(params)
        delta = (probs - Y) / n
        a_last = cache[-1][0]
        grads[-2] = a_last.T @ delta
        grads[-1] = delta.sum(axis=0)
        upstream = delta @ params[-2].T
        for layer in range(len(params) // 2 - 2, -1, -1):
            a_in, z, mask = cache[layer]
            if mask is not None:
                upstream = upstream * mask
            dz = upstream * (z > 0)
            grads[2 * layer] = a_in.T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            if layer:
                upstream = dz @ params[2 * layer].T
        return loss, grads

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y):
        X = check_bit_matrix(X).astype(np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if (y < 0).any():
            raise ValueError("labels must be nonnegative class indices")
        n_classes = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if y.max() >= n_classes:
            raise ValueError(f"label {y.max()} out of range for {n_classes} classes")
        if np.unique(y).size < 2:
            warnings.warn("training set contains a single class", UserWarning, stacklevel=2)

        rng = np.random.default_rng(self.random_state)
        params = self._init_params(X.shape[1], n_classes, rng)
        Y = np.eye(n_classes)[y]
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        t = 0
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(X.shape[0])
            for start in range(0, X.shape[0], self.batch_size):
                idx = order[start : start + self.batch_size]
                _, grads = self._loss_and_grads(params, X[idx], Y[idx], rng)
                t += 1
                lr_t = self.learning_rate * np.sqrt(1 - self.beta2**t) / (1 - self.beta1**t)
                for i, g in enumerate(grads):
                    m[i] = self.beta1 * m[i] + (1 - self.beta1) * g
                    v[i] = self.beta2 * v[i] + (1 - self.beta2) * g * g
                    params[i] = params[i] - lr_t * m[i] / (np.sqrt(v[i]) + self.adam_eps)
            loss, _ = self._loss_and_grads(params, X, Y)
            self.loss_curve_.append(float(loss))

        self._set_params_arrays(params)
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def _set_params_arrays(self, params):
        self.coefs_ = [params[i] for i in range(0, len(params), 2)]
        self.intercepts_ = [params[i] for i in range(1, len(params), 2)]

    @property
    def _params(self):
        out = []
        for W, b in zip(self.coefs_, self.intercepts_):
            out += [W, b]
        return out

    def predict_proba(self, X):
        check_is_fitted(self, "coefs_")
        X = check_bit_matrix(X, self.n_features_in_).astype(np.float64)
        probs, _ = self._forward(self._params, X)
        return probs

    def predict(self, X):
        # argmax keeps the lowest index on ties
        return np.argmax(self.predict_proba(X), axis=1)


class ProfileDecoder(BaseEstimator):
    """One classifier per category, each reading the whole report.

    Parameters
    ----------
    class_counts : sequence of int
        Number of classes per category.
    estimator : classifier, optional
        Template cloned per category; defaults to :class:`MLPDecoder`.
    random_state : int
        Category ``c`` gets ``random_state + c`` when the template accepts it.
    """

    def __init__(self, class_counts=(7, 8, 12), estimator=None, random_state=0):
        self.class_counts = class_counts
        self.estimator = estimator
        self.random_state = random_state

    def fit(self, X, Y):
        X = check_bit_matrix(X)
        Y = np.asarray(Y, dtype=np.int64)
        if Y.shape != (X.shape[0], len(self.class_counts)):
            raise ValueError(f"Y must have shape ({X.shape[0]}, {len(self.class_counts)})")
        template = self.estimator if self.estimator is not None else MLPDecoder()
        self.estimators_ = []
        for c, n in enumerate(self.class_counts):
            est = clone(template)
            names = est.get_params()
            if "n_classes" in names:
                est.set_params(n_classes=n)
            if "random_state" in names:
                est.set_params(random_state=self.random_state + c)
            self.estimators_.append(est.fit(X, Y[:, c]))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimators_")
        X = check_bit_matrix(X, self.n_features_in_)
        return np.column_stack([est.predict(X) for est in self.estimators_])

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        X = check_bit_matrix(X, self.n_features_in_)
        return [est.predict_proba(X) for est in self.estimators_]


# -- metrics ---------------------------------------------------------------


@dataclass
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    confusion: np.ndarray = field(repr=False)

    @property
    def weighted_recall(self) -> float:
        return float(np.sum(self.recall * self.support) / self.support.sum())

    def to_dict(self) -> dict:
        return {
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }


def classification_report(y_true, y_pred, n_classes: Optional[int] = None) -> ClassificationReport:
    """Per-class precision, recall and F1 from the confusion matrix.

    Rows of the confusion matrix are true classes. A zero denominator yields 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("y_true and y_pred must be nonempty and the same length")
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(float)
    predicted = confusion.sum(axis=0)
    support = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return ClassificationReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(tp.sum() / y_true.size),
        confusion=confusion,
    )


# -- functional API --------------------------------------------------------


def train(X, y, config: MlpConfig) -> MLPDecoder:
    X = check_bit_matrix(X, config.input_size)
    return config.estimator().fit(X, y)


def predict(model, bv) -> tuple:
    """Label and probability vector for a single report."""
    bv = check_bitvector(bv, getattr(model, "n_features_in_", None))
    probs = model.predict_proba(bv[np.newaxis, :])[0]
    return int(np.argmax(probs)), probs


def evaluate(model, X, y) -> ClassificationReport:
    X = check_bit_matrix(X)
    n_classes = len(getattr(model, "classes_", [])) or None
    return classification_report(y, model.predict(X), n_classes)


def decode_profile(models: Sequence, report, taxonomy: Optional[Taxonomy] = None) -> Profile:
    """Reconstruct a profile by running every category model on one report."""
    if taxonomy is not None and len(models) != taxonomy.n_categories:
        raise ValueError(
            f"{len(models)} models for a taxonomy with {taxonomy.n_categories} categories"
        )
    report = check_bitvector(report)
    selections = []
    for c, model in enumerate(models):
        if getattr(model, "n_features_in_", report.size) != report.size:
            raise ValueError(f"model {c} expects {model.n_features_in_} bits, got {report.size}")
        label = int(model.predict(report[np.newaxis, :])[0])
        if taxonomy is not None and not 0 <= label < taxonomy.class_counts[c]:
            raise ValueError(f"model {c} predicted label {label} outside its category")
        selections.append(label)
    return Profile(tuple(selections))


# -- persistence -----------------------------------------------------------


def save_model(model: MLPDecoder, path) -> None:
    """Write config and row-major weights as JSON; floats round-trip exactly."""
    check_is_fitted(model, "coefs_")
    doc = {
        "config": model.get_params(),
        "n_features_in": int(model.n_features_in_),
        "n_classes": int(len(model.classes_)),
        "layers": [
            {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(model.coefs_, model.intercepts_)
        ],
    }
    doc["config"]["hidden_sizes"] = list(doc["config"]["hidden_sizes"])
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> MLPDecoder:
    with open(os.fspath(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    config = dict(doc["config"])
    config["hidden_sizes"] = tuple(config["hidden_sizes"])
    model = MLPDecoder(**config)
    params = []
    for layer in doc["layers"]:
        params.append(np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"]))
        params.append(np.array(layer["bias"], dtype=np.float64))
    model._set_params_arrays(params)
    model.classes_ = np.arange(doc["n_classes"])
    model.n_features_in_ = doc["n_features_in"]
    return model
