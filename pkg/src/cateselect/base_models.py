"""Small self-contained regressors and probability classifiers.

These serve as base ML models inside the effect learners and as nuisance
models for the baseline selectors. All estimators follow the sklearn
fit/predict convention (hyperparameters in ``__init__``, ``fit`` returns
``self``) and are deterministic given their ``random_state``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin

from .validation import (
    ValidationError,
    as_float_matrix,
    as_float_vector,
    check_consistent_length,
    require,
)

# Probability outputs are clipped away from {0,1}; pseudo-outcome formulas
# divide by these probabilities.
PROB_CLIP = 0.01

REGRESSOR_KINDS = ("ridge", "knn", "boosted_trees", "mlp")
CLASSIFIER_KINDS = ("ridge", "logistic", "knn", "boosted_trees", "mlp")


def _check_fit_inputs(X, y, sample_weight=None):
    X = as_float_matrix(X, "X")
    y = as_float_vector(y, "y")
    check_consistent_length(X, y, names=["X", "y"])
    if sample_weight is not None:
        w = as_float_vector(sample_weight, "sample_weight")
        check_consistent_length(X, w, names=["X", "sample_weight"])
        require(np.all(w >= 0), "sample_weight must be nonnegative")
        require(w.sum() > 0, "sample_weight must not be all zero")
    else:
        w = np.ones(X.shape[0])
    return X, y, w


# ---------------------------------------------------------------------------
# Linear models
# ---------------------------------------------------------------------------

class RidgeRegressor(RegressorMixin, BaseEstimator):
    """Weighted ridge regression with an unpenalized intercept.

    Solves (X'WX + alpha*D) beta = X'Wy where D penalizes every coefficient
    except the intercept.
    """

    def __init__(self, alpha: float = 1.0, random_state=None):
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        require(self.alpha >= 0, "alpha must be >= 0")
        X, y, w = _check_fit_inputs(X, y, sample_weight)
        X1 = np.column_stack([np.ones(X.shape[0]), X])
        Xw = X1 * w[:, None]
        A = X1.T @ Xw
        penalty = np.eye(X1.shape[1]) * self.alpha
        penalty[0, 0] = 0.0
        A += penalty
        b = Xw.T @ y
        try:
            beta = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            A += np.eye(A.shape[0]) * 1e-10 * (1.0 + np.trace(A))
            beta = np.linalg.solve(A, b)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        resid = y - (X @ self.coef_ + self.intercept_)
        self.train_loss_ = float(np.average(resid**2, weights=w))
        return self

    def predict(self, X):
        X = as_float_matrix(X, "X")
        return X @ self.coef_ + self.intercept_


class LogisticClassifier(ClassifierMixin, BaseEstimator):
    """L2-regularized logistic regression fit by Newton-Raphson."""

    def __init__(self, l2: float = 1e-4, max_iter: int = 100, tol: float = 1e-10,
                 random_state=None):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, labels):
        X, y, _ = _check_fit_inputs(X, labels)
        _check_two_classes(y)
        X1 = np.column_stack([np.ones(X.shape[0]), X])
        beta = np.zeros(X1.shape[1])
        pen = np.eye(X1.shape[1]) * self.l2
        pen[0, 0] = 0.0
        for _ in range(self.max_iter):
            p = _sigmoid(X1 @ beta)
            grad = X1.T @ (p - y) + pen @ beta
            r = np.clip(p * (1 - p), 1e-10, None)
            H = X1.T @ (X1 * r[:, None]) + pen + np.eye(X1.shape[1]) * 1e-10
            step = np.linalg.solve(H, grad)
            beta -= step
            if np.max(np.abs(step)) < self.tol:
                break
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        p = self.predict_proba(X)[:, 1]
        self.train_loss_ = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
        return self

    def predict_proba(self, X):
        X = as_float_matrix(X, "X")
        p1 = np.clip(_sigmoid(X @ self.coef_ + self.intercept_), PROB_CLIP, 1 - PROB_CLIP)
        return np.column_stack([1 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _check_two_classes(y):
    vals = np.unique(y)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValidationError("labels must be binary 0/1")
    if vals.size < 2:
        raise ValidationError(
            "labels contain a single class; a propensity model needs both arms"
        )


# ---------------------------------------------------------------------------
# Nearest neighbors
# ---------------------------------------------------------------------------

class KNNRegressor(RegressorMixin, BaseEstimator):
    """Brute-force k-nearest-neighbor regression (ties broken by row index)."""

    def __init__(self, k: int = 5, random_state=None):
        self.k = k
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        require(self.k >= 1, "k must be >= 1")
        X, y, w = _check_fit_inputs(X, y, sample_weight)
        self.X_ = X
        self.y_ = y
        self.w_ = w
        self.train_loss_ = float(np.average((self.predict(X) - y) ** 2, weights=w))
        return self

    def _neighbor_values(self, X):
        X = as_float_matrix(X, "X")
        k = min(self.k, self.X_.shape[0])
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], 256):
            chunk = X[start : start + 256]
            d2 = ((chunk[:, None, :] - self.X_[None, :, :]) ** 2).sum(axis=2)
            order = np.argsort(d2, axis=1, kind="stable")[:, :k]
            vals = self.y_[order]
            wts = self.w_[order]
            wsum = wts.sum(axis=1)
            safe = np.where(wsum > 0, wsum, 1.0)
            mean_w = (vals * wts).sum(axis=1) / safe
            mean_u = vals.mean(axis=1)
            out[start : start + 256] = np.where(wsum > 0, mean_w, mean_u)
        return out

    def predict(self, X):
        return self._neighbor_values(X)


class KNNClassifier(ClassifierMixin, BaseEstimator):
    """k-NN probability classifier: neighbor vote fraction, clipped."""

    def __init__(self, k: int = 5, random_state=None):
        self.k = k
        self.random_state = random_state

    def fit(self, X, labels):
        X, y, _ = _check_fit_inputs(X, labels)
        _check_two_classes(y)
        self._reg = KNNRegressor(k=self.k).fit(X, y)
        self.train_loss_ = self._reg.train_loss_
        return self

    def predict_proba(self, X):
        p1 = np.clip(self._reg.predict(X), PROB_CLIP, 1 - PROB_CLIP)
        return np.column_stack([1 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Gradient-boosted regression trees
# ---------------------------------------------------------------------------

@dataclass
class _Tree:
    # Full binary-tree array layout; leaves carry values, internal nodes
    # carry (feature, threshold) with the x <= threshold convention for left.
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    is_leaf: np.ndarray
    depth: int

    def predict(self, X):
        cur = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            internal = ~self.is_leaf[cur]
            feat = self.feature[cur]
            thr = self.threshold[cur]
            go_right = X[rows, feat] > thr
            nxt = cur * 2 + 1 + go_right
            cur = np.where(internal, nxt, cur)
        return self.value[cur]


def _grow_tree(X, y, w, max_depth: int):
    """Exact greedy weighted least-squares tree; returns tree and train fit.

    The split search is vectorized over all features at once: sort every
    column of the node's submatrix, build prefix sums, and pick the cut
    maximizing the weighted SSE reduction (first flat index wins ties).
    """
    n = X.shape[0]
    n_nodes = 2 ** (max_depth + 1) - 1
    feature = np.zeros(n_nodes, dtype=np.int64)
    threshold = np.zeros(n_nodes)
    value = np.zeros(n_nodes)
    is_leaf = np.ones(n_nodes, dtype=bool)
    train_pred = np.empty(n)

    stack = [(0, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        wn = w[idx]
        W = wn.sum()
        S = (wn * yn).sum()
        leaf_val = float(S / W) if W > 0 else float(yn.mean())
        if depth >= max_depth or idx.size < 2:
            value[node] = leaf_val
            train_pred[idx] = leaf_val
            continue
        Xn = X[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        sx = np.take_along_axis(Xn, order, axis=0)
        sw = wn[order]
        cw = np.cumsum(sw, axis=0)[:-1]
        cs = np.cumsum(sw * yn[order], axis=0)[:-1]
        cr = W - cw
        ok = (sx[:-1] < sx[1:]) & (cw > 0) & (cr > 0)
        base_score = S * S / W if W > 0 else 0.0
        gains = np.full(ok.shape, -np.inf)
        np.divide(cs**2, cw, out=gains, where=ok)
        gains += np.divide((S - cs) ** 2, cr, out=np.zeros_like(gains), where=ok) \
            - base_score
        gains[~ok] = -np.inf
        flat = int(np.argmax(gains))
        p, j = np.unravel_index(flat, gains.shape)
        if not np.isfinite(gains[p, j]) or gains[p, j] <= 1e-12:
            value[node] = leaf_val
            train_pred[idx] = leaf_val
            continue
        feature[node] = j
        threshold[node] = float(sx[p, j])
        is_leaf[node] = False
        col = order[:, j]
        stack.append((2 * node + 1, idx[col[: p + 1]], depth + 1))
        stack.append((2 * node + 2, idx[col[p + 1 :]], depth + 1))

    return _Tree(feature, threshold, value, is_leaf, max_depth), train_pred


class BoostedTreesRegressor(RegressorMixin, BaseEstimator):
    """Gradient boosting with depth-limited regression trees (squared loss)."""

    def __init__(self, rounds: int = 100, depth: int = 3, learning_rate: float = 0.1,
                 random_state=None):
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        require(self.rounds >= 1, "rounds must be >= 1")
        require(1 <= self.depth <= 8, "depth must be in [1, 8]")
        require(self.learning_rate > 0, "learning_rate must be > 0")
        X, y, w = _check_fit_inputs(X, y, sample_weight)
        self.init_ = float(np.average(y, weights=w))
        pred = np.full(X.shape[0], self.init_)
        self.trees_ = []
        for _ in range(self.rounds):
            tree, fit_vals = _grow_tree(X, y - pred, w, self.depth)
            pred += self.learning_rate * fit_vals
            self.trees_.append(tree)
        self.train_loss_ = float(np.average((y - pred) ** 2, weights=w))
        return self

    def predict(self, X):
        X = as_float_matrix(X, "X")
        out = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(X)
        return out


class BoostedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Boosted-tree probability model: squared-loss fit on 0/1 labels, clipped."""

    def __init__(self, rounds: int = 100, depth: int = 3, learning_rate: float = 0.1,
                 random_state=None):
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, labels):
        X, y, _ = _check_fit_inputs(X, labels)
        _check_two_classes(y)
        self._reg = BoostedTreesRegressor(
            rounds=self.rounds, depth=self.depth, learning_rate=self.learning_rate
        ).fit(X, y)
        self.train_loss_ = self._reg.train_loss_
        return self

    def predict_proba(self, X):
        p1 = np.clip(self._reg.predict(X), PROB_CLIP, 1 - PROB_CLIP)
        return np.column_stack([1 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------

def _mlp_shapes(d_in: int, hidden: Sequence[int]):
    sizes = [d_in] + list(hidden) + [1]
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def _unpack(params: np.ndarray, shapes):
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in shapes:
        weights.append(params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(params[pos : pos + fan_out])
        pos += fan_out
    return weights, biases


def _init_params(shapes, rng):
    chunks = []
    for fan_in, fan_out in shapes:
        chunks.append(rng.standard_normal(fan_in * fan_out) / np.sqrt(fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _mlp_forward(params, shapes, X):
    weights, biases, = _unpack(params, shapes)
    acts = [X]
    h = X
    for i, (Wm, b) in enumerate(zip(weights, biases)):
        z = h @ Wm + b
        h = z if i == len(weights) - 1 else np.tanh(z)
        acts.append(h)
    return acts


def _mlp_loss_and_grad(params, shapes, X, y, w, logits_to_prob=False):
    """Weighted loss and flat gradient; squared error or BCE on the output."""
    weights, biases = _unpack(params, shapes)
    acts = _mlp_forward(params, shapes, X)
    out = acts[-1][:, 0]
    wsum = w.sum()
    if logits_to_prob:
        p = _sigmoid(out)
        eps = 1e-12
        loss = float(-np.sum(w * (y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))) / wsum)
        delta = (w * (p - y) / wsum)[:, None]
    else:
        resid = out - y
        loss = float(0.5 * np.sum(w * resid**2) / wsum)
        delta = (w * resid / wsum)[:, None]
    grads = []
    for i in reversed(range(len(weights))):
        a_prev = acts[i]
        gW = a_prev.T @ delta
        gb = delta.sum(axis=0)
        grads.append((gW, gb))
        if i > 0:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    grads.reverse()
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
    return loss, flat


def _adam(params, grad_fn, epochs, lr):
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    loss = np.inf
    for t in range(1, epochs + 1):
        loss, g = grad_fn(params)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        params = params - lr * mh / (np.sqrt(vh) + eps)
    return params, loss


class MLPRegressor(RegressorMixin, BaseEstimator):
    """Small tanh network trained full-batch with Adam on weighted squared loss.

    Inputs and targets are standardized internally; predictions are mapped
    back to the original scale.
    """

    def __init__(self, hidden: Sequence[int] = (64, 64), epochs: int = 200,
                 learning_rate: float = 1e-3, random_state=None):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _standardize_X(self, X):
        sd = np.where(self.x_sd_ > 0, self.x_sd_, 1.0)
        return (X - self.x_mean_) / sd

    def fit(self, X, y, sample_weight=None):
        require(self.epochs >= 1, "epochs must be >= 1")
        require(self.learning_rate > 0, "learning_rate must be > 0")
        X, y, w = _check_fit_inputs(X, y, sample_weight)
        self.x_mean_, self.x_sd_ = X.mean(axis=0), X.std(axis=0)
        self.y_mean_, self.y_sd_ = float(y.mean()), float(y.std())
        self.shapes_ = _mlp_shapes(X.shape[1], self.hidden)
        self.constant_target_ = self.y_sd_ == 0.0
        if self.constant_target_:
            # degenerate objective with a closed-form optimum
            self.params_ = np.zeros(sum(i * o + o for i, o in self.shapes_))
            self.train_loss_ = 0.0
            return self
        Xs = self._standardize_X(X)
        ys = (y - self.y_mean_) / self.y_sd_
        rng = np.random.default_rng(self.random_state)
        params = _init_params(self.shapes_, rng)
        params, loss = _adam(
            params,
            lambda p: _mlp_loss_and_grad(p, self.shapes_, Xs, ys, w),
            self.epochs,
            self.learning_rate,
        )
        self.params_ = params
        self.train_loss_ = loss
        return self

    def loss_and_grad(self, params, X, y, sample_weight=None):
        """Objective value and analytic gradient on the internal scale."""
        X, y, w = _check_fit_inputs(X, y, sample_weight)
        return _mlp_loss_and_grad(params, self.shapes_, X, y, w)

    def predict(self, X):
        X = as_float_matrix(X, "X")
        if self.constant_target_:
            return np.full(X.shape[0], self.y_mean_)
        out = _mlp_forward(self.params_, self.shapes_, self._standardize_X(X))[-1][:, 0]
        return out * self.y_sd_ + self.y_mean_


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Small tanh network with a sigmoid head trained on cross-entropy."""

    def __init__(self, hidden: Sequence[int] = (64, 64), epochs: int = 200,
                 learning_rate: float = 1e-3, random_state=None):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, labels):
        X, y, w = _check_fit_inputs(X, labels)
        _check_two_classes(y)
        self.x_mean_, self.x_sd_ = X.mean(axis=0), X.std(axis=0)
        sd = np.where(self.x_sd_ > 0, self.x_sd_, 1.0)
        Xs = (X - self.x_mean_) / sd
        self.shapes_ = _mlp_shapes(X.shape[1], self.hidden)
        rng = np.random.default_rng(self.random_state)
        params = _init_params(self.shapes_, rng)
        params, loss = _adam(
            params,
            lambda p: _mlp_loss_and_grad(p, self.shapes_, Xs, y, w, logits_to_prob=True),
            self.epochs,
            self.learning_rate,
        )
        self.params_ = params
        self.train_loss_ = loss
        return self

    def predict_proba(self, X):
        X = as_float_matrix(X, "X")
        sd = np.where(self.x_sd_ > 0, self.x_sd_, 1.0)
        logits = _mlp_forward(self.params_, self.shapes_, (X - self.x_mean_) / sd)[-1][:, 0]
        p1 = np.clip(_sigmoid(logits), PROB_CLIP, 1 - PROB_CLIP)
        return np.column_stack([1 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Factories
# ---------------------------------------------------------------------------

def make_regressor(kind: str, params: Optional[dict] = None, random_state=None):
    """Instantiate a regressor by kind name with documented defaults."""
    params = dict(params or {})
    if kind == "ridge":
        return RidgeRegressor(alpha=params.pop("alpha", 1.0), random_state=random_state)
    if kind == "knn":
        return KNNRegressor(k=params.pop("k", 5), random_state=random_state)
    if kind == "boosted_trees":
        return BoostedTreesRegressor(
            rounds=params.pop("rounds", 100),
            depth=params.pop("depth", 3),
            learning_rate=params.pop("learning_rate", 0.1),
            random_state=random_state,
        )
    if kind == "mlp":
        return MLPRegressor(
            hidden=tuple(params.pop("hidden", (64, 64))),
            epochs=params.pop("epochs", 200),
            learning_rate=params.pop("learning_rate", 1e-3),
            random_state=random_state,
        )
    if kind == "logistic":
        raise ValidationError("'logistic' is a classification-only kind")
    raise ValidationError(f"unknown regressor kind {kind!r}; choose from {REGRESSOR_KINDS}")


def make_classifier(kind: str, params: Optional[dict] = None, random_state=None):
    """Instantiate the probability classifier paired with a base-model kind.

    The linear kind uses logistic regression for classification, mirroring
    how ridge is used for regression.
    """
    params = dict(params or {})
    if kind in ("ridge", "logistic"):
        return LogisticClassifier(l2=params.pop("l2", 1e-4), random_state=random_state)
    if kind == "knn":
        return KNNClassifier(k=params.pop("k", 5), random_state=random_state)
    if kind == "boosted_trees":
        return BoostedTreesClassifier(
            rounds=params.pop("rounds", 100),
            depth=params.pop("depth", 3),
            learning_rate=params.pop("learning_rate", 0.1),
            random_state=random_state,
        )
    if kind == "mlp":
        return MLPClassifier(
            hidden=tuple(params.pop("hidden", (64, 64))),
            epochs=params.pop("epochs", 200),
            learning_rate=params.pop("learning_rate", 1e-3),
            random_state=random_state,
        )
    raise ValidationError(f"unknown classifier kind {kind!r}; choose from {CLASSIFIER_KINDS}")


def fit_regressor(kind: str, X, y, sample_weight=None, params=None, random_state=None):
    """Convenience wrapper: build and fit a regressor in one call."""
    return make_regressor(kind, params, random_state).fit(X, y, sample_weight=sample_weight)


def fit_classifier(kind: str, X, labels, params=None, random_state=None):
    """Convenience wrapper: build and fit a probability classifier."""
    return make_classifier(kind, params, random_state).fit(X, labels)
