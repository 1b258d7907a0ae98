"""scikit-learn compatible classifiers wrapping the predictive-coding and
backprop trainers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .dataio import one_hot
from .inference import InferenceConfig
from .layers import build_mlp
from .learning import LearningConfig
from .training import Trainer, algo_parts, make_schedule, predict_logits


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class _NetClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses fix ``algo``."""

    def _make_trainer(self, n_features, n_classes, total_steps):
        raise NotImplementedError

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) < 2:
            raise ValueError("only one class present in y; a classifier needs at least two")
        codes = self.label_encoder_.transform(y)
        n_classes = len(self.classes_)
        dtype = np.dtype(self.dtype).type
        Xd = X.astype(dtype)
        steps = -(-len(Xd) // self.batch_size)
        trainer = self._make_trainer(X.shape[1], n_classes, self.epochs * steps)
        rng = np.random.Generator(np.random.PCG64(self.random_state))
        self.energies_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(Xd))
            e = np.zeros(trainer.net.L)
            for s in range(0, len(Xd), self.batch_size):
                idx = order[s:s + self.batch_size]
                res = trainer.train_batch(Xd[idx], one_hot(codes[idx], n_classes, dtype))
                e += res.energies
            self.energies_.append(e / steps)
        self.energies_ = np.asarray(self.energies_)
        self.network_ = trainer.net
        return self

    def _logits(self, X):
        check_is_fitted(self, "network_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return predict_logits(self.network_, X.astype(self.network_.dtype)).astype(np.float64)

    def decision_function(self, X):
        """Output-layer logits; for two classes the margin of ``classes_[1]``."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        return _softmax(self._logits(X))

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[np.argmax(self._logits(X), axis=1)]


class PCClassifier(_NetClassifier):
    """Multilayer perceptron trained with predictive coding.

    Parameters
    ----------
    depth : int
        Number of weight layers (at least 2).
    hidden : int
        Width of every hidden layer.
    algo : str
        One of ``pc``, ``pc-d``, ``pc-s``, ``pc-f``, ``pc-df``, ``pc-sf``.
    T : int or None
        Relaxation steps per batch; ``None`` uses ``depth``.
    """

    def __init__(self, depth=3, hidden=64, activation="relu", algo="pc", T=None, lr_x=0.1,
                 momentum_x=0.0, k=1.0, beta=None, lr_w=1e-3, weight_decay=1e-4, epochs=10,
                 batch_size=64, dtype="float64", random_state=0):
        self.depth = depth
        self.hidden = hidden
        self.activation = activation
        self.algo = algo
        self.T = T
        self.lr_x = lr_x
        self.momentum_x = momentum_x
        self.k = k
        self.beta = beta
        self.lr_w = lr_w
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.dtype = dtype
        self.random_state = random_state

    def _make_trainer(self, n_features, n_classes, total_steps):
        kind, rule = algo_parts(self.algo)
        if kind is None:
            raise ValueError("PCClassifier needs a predictive-coding algo; use BPClassifier for bp")
        net = build_mlp(self.depth, (n_features,), self.hidden, n_classes, self.activation,
                        False, self.random_state, np.dtype(self.dtype).type)
        icfg = InferenceConfig(self.T or net.L, self.lr_x, self.momentum_x)
        learn = LearningConfig(self.lr_w, self.weight_decay, rule)
        sched = make_schedule(kind, self.lr_x, self.k, beta=self.beta)
        return Trainer(net, self.algo, icfg, learn, sched, "off", total_steps, seed=self.random_state)


class BPClassifier(_NetClassifier):
    """The same multilayer perceptron trained with backprop (the baseline)."""

    def __init__(self, depth=3, hidden=64, activation="relu", loss="cross_entropy", lr_w=1e-3,
                 weight_decay=1e-4, epochs=10, batch_size=64, dtype="float64", random_state=0):
        self.depth = depth
        self.hidden = hidden
        self.activation = activation
        self.loss = loss
        self.lr_w = lr_w
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.dtype = dtype
        self.random_state = random_state

    def _make_trainer(self, n_features, n_classes, total_steps):
        net = build_mlp(self.depth, (n_features,), self.hidden, n_classes, self.activation,
                        False, self.random_state, np.dtype(self.dtype).type)
        learn = LearningConfig(self.lr_w, self.weight_decay)
        return Trainer(net, "bp", learn=learn, bn_mode="off", total_steps=total_steps,
                       bp_loss=self.loss, seed=self.random_state)
