"""Scikit-learn style wrapper fitting a linear model with SBDA-u."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .blocks import BlockPartition
from .geometry import Regularizer
from .oracles import L1Regression, SquaredLoss, default_probes, estimate_params
from .schedules import AdaptiveConvex, ConstantConvex, StronglyConvexAggressive
from .solvers import sbda_u


class BlockDualAveragingRegressor(RegressorMixin, BaseEstimator):
    """Linear regression by stochastic block dual averaging.

    Parameters
    ----------
    loss : {"absolute", "squared"}
        Per-sample loss; ``"absolute"`` gives robust (l1) regression.
    penalty : {None, "l1", "l2"}
        Regularizer ``alpha * ||w||_1`` or ``alpha / 2 * ||w||^2``.
    alpha : float
        Regularization weight.
    n_blocks : int
        Number of coordinate blocks (capped at the number of features).
    n_iter : int
        Number of block updates.
    schedule : {"adaptive", "constant"}
        Stepsize rule for the convex case. With ``penalty="l2"`` the
        strongly convex aggressive rule is always used.
    radius : float
        Guess of the per-block distance from the origin to a solution.
    random_state : int
        Seed of the run.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Averaged iterate.
    n_features_in_ : int
    """

    def __init__(self, loss="absolute", penalty=None, alpha=0.0, n_blocks=10, n_iter=5000,
                 schedule="adaptive", radius=1.0, random_state=0):
        self.loss = loss
        self.penalty = penalty
        self.alpha = alpha
        self.n_blocks = n_blocks
        self.n_iter = n_iter
        self.schedule = schedule
        self.radius = radius
        self.random_state = random_state

    def _oracle(self, X, y):
        part = BlockPartition.even(X.shape[1], min(self.n_blocks, X.shape[1]))
        if self.penalty is None:
            reg = Regularizer.zero()
        elif self.penalty == "l1":
            reg = Regularizer.l1(self.alpha)
        elif self.penalty == "l2":
            reg = Regularizer.sql2(self.alpha)
        else:
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.loss == "absolute":
            return L1Regression(part, reg, None, {}, A=X, b=y)
        if self.loss == "squared":
            return SquaredLoss(part, reg, None, {}, Z=X, b=y, Z_test=X[:0], b_test=y[:0])
        raise ValueError(f"unknown loss {self.loss!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        oracle = self._oracle(X, y)
        params = estimate_params(oracle, default_probes(oracle, seed=self.random_state), 500,
                                 self.radius, rng=self.random_state)
        n = oracle.partition.n_blocks
        if self.penalty == "l2" and self.alpha > 0:
            sched = StronglyConvexAggressive(self.alpha, n, self.n_iter)
        elif self.schedule == "constant":
            sched = ConstantConvex(params, self.n_iter)
        elif self.schedule == "adaptive":
            sched = AdaptiveConvex(params)
        else:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        result = sbda_u(oracle, sched, self.n_iter, self.random_state, log_every=self.n_iter)
        self.coef_ = result.x_avg
        self.n_features_in_ = X.shape[1]
        self.objective_ = result.final_objective
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_
