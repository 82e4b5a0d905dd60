"""scikit-learn style wrapper around the MLP trainers.

>>> from dho2.estimators import DHO2Classifier
>>> clf = DHO2Classifier(hidden=(8,), K=10).fit(X, y)   # doctest: +SKIP
>>> clf.predict(X[:3])                                  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .collectives import WorkerGroup
from .optimizer import FosiConfig
from .oracle import Dataset, mlp_oracle
from .trainers import TrainConfig, initial_point, train


class DHO2Classifier(ClassifierMixin, BaseEstimator):
    """Tanh/ReLU network trained with one of the distributed trainers.

    Parameters mirror :class:`dho2.trainers.TrainConfig` and
    :class:`dho2.optimizer.FosiConfig`; ``workers`` sets the size of the
    simulated group.
    """

    def __init__(
        self,
        hidden=(8,),
        activation="tanh",
        trainer="dho2",
        workers=1,
        K=25,
        P=4,
        sigma=1e-3,
        base="adam",
        lr=0.1,
        weight_decay=0.0,
        k=8,
        l=0,
        alpha=0.3,
        refresh_interval=None,
        batch_size=None,
        random_state=0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.trainer = trainer
        self.workers = workers
        self.K = K
        self.P = P
        self.sigma = sigma
        self.base = base
        self.lr = lr
        self.weight_decay = weight_decay
        self.k = k
        self.l = l
        self.alpha = alpha
        self.refresh_interval = refresh_interval
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.n_features_in_ = X.shape[1]
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        seed = int(self.random_state or 0)
        data = Dataset(X, codes, task="classification", seed=seed, classes=tuple(str(c) for c in self.classes_))
        sizes = [X.shape[1], *self.hidden, max(2, len(self.classes_))]
        self.oracle_ = mlp_oracle(sizes, self.activation, data)
        k = min(self.k, self.oracle_.n)
        config = TrainConfig(
            trainer=self.trainer,
            K=self.K,
            P=self.P,
            sigma=self.sigma,
            base=self.base,
            lr=self.lr,
            weight_decay=self.weight_decay,
            fosi=FosiConfig(k=k, l=self.l, alpha=self.alpha, refresh_interval=self.refresh_interval),
            batch_size=self.batch_size,
            seed=seed,
            init_seed=seed,
        )
        w0 = initial_point(self.oracle_, seed)
        result = train(config, self.oracle_, data, WorkerGroup(self.workers), w0=w0)
        self.coef_ = result.w
        self.metrics_ = result.metrics
        self.n_iter_ = result.metrics[-1]["step"] if result.metrics else 0
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        logits = self.oracle_.predict(self.coef_, X)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        if len(self.classes_) == 1:
            return np.ones((X.shape[0], 1))
        return p

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
