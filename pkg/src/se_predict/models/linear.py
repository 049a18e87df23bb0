"""L1-regularized linear regression fitted by cyclic coordinate descent, with the
penalty chosen by k-fold cross-validation over a logarithmic grid."""

from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    l1_strength: float
    cv_alphas: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_mse: np.ndarray = field(default_factory=lambda: np.empty(0))

    family = "linear"

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def _state(self):
        meta = {"bias": self.bias, "l1_strength": self.l1_strength}
        return meta, {"weights": self.weights, "cv_alphas": self.cv_alphas, "cv_mse": self.cv_mse}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(arrays["weights"], meta["bias"], meta["l1_strength"],
                   arrays["cv_alphas"], arrays["cv_mse"])


def _standardize(X, y):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    if not keep.any():
        raise ValueError("design matrix has no non-constant columns")
    Xs = (X[:, keep] - mean[keep]) / scale[keep]
    return Xs, y - y.mean(), mean, scale, keep


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso_objective(gram, xty, yty, w, alpha) -> float:
    """``1/(2n) ||y - X w||^2 + alpha ||w||_1`` from the normalized moments."""
    return 0.5 * (yty - 2 * xty @ w + w @ gram @ w) + alpha * np.abs(w).sum()


@njit(cache=True)
def _sweeps(gram, xty, alpha, w, tol, max_sweeps, record):
    p = gram.shape[0]
    q = gram @ w
    trace = np.empty((max_sweeps if record else 0, p))
    done = 0
    for sweep in range(max_sweeps):
        max_step, max_w = 0.0, 0.0
        for j in range(p):
            old = w[j]
            new = _soft(xty[j] - q[j] + gram[j, j] * old, alpha) / gram[j, j]
            if new != old:
                # gram is symmetric, so row j is column j
                for i in range(p):
                    q[i] += gram[j, i] * (new - old)
                w[j] = new
                max_step = max(max_step, abs(new - old))
            max_w = max(max_w, abs(new))
        if record:
            trace[sweep] = w
        done = sweep + 1
        if max_step <= tol * max(max_w, 1e-12):
            break
    return w, trace[:done]


def coordinate_descent(gram, xty, alpha, w0=None, tol=1e-8, max_sweeps=5000, history=None):
    """Minimize the lasso objective in covariance form.

    ``gram = X^T X / n`` and ``xty = X^T y / n`` for centered data. If
    ``history`` is a list, the weights after every sweep are appended.
    """
    gram = np.ascontiguousarray(gram, dtype=float)
    w = np.zeros(gram.shape[0]) if w0 is None else np.array(w0, dtype=float)
    w, trace = _sweeps(gram, np.asarray(xty, dtype=float), float(alpha), w, float(tol),
                       int(max_sweeps), history is not None)
    if history is not None:
        history.extend(trace.copy())
    return w


def _path(Xs, yc, alphas, tol, max_sweeps):
    n = Xs.shape[0]
    gram = Xs.T @ Xs / n
    xty = Xs.T @ yc / n
    w = None
    out = []
    for a in alphas:
        w = coordinate_descent(gram, xty, a, w, tol, max_sweeps)
        out.append(w)
    return out


def alpha_grid(X, y, n_alphas=40, eps=1e-5) -> np.ndarray:
    Xs, yc, *_ = _standardize(np.asarray(X, float), np.asarray(y, float))
    alpha_max = np.max(np.abs(Xs.T @ yc)) / Xs.shape[0]
    if alpha_max == 0:
        alpha_max = 1.0
    return np.geomspace(alpha_max, alpha_max * eps, n_alphas)


def train_linear(X, y, folds: int = 5, alphas=None, seed: int = 0, tol: float = 1e-8,
                 max_sweeps: int = 5000) -> LinearModel:
    """Fit an L1-penalized linear model with a cross-validated penalty.

    Features are standardized internally; the returned weights act on the
    original feature scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if not 2 <= folds <= n:
        raise ValueError("need 2 <= folds <= number of samples")
    alphas = alpha_grid(X, y) if alphas is None else np.sort(np.asarray(alphas, float))[::-1]

    perm = np.random.default_rng(seed).permutation(n)
    mse = np.zeros(len(alphas))
    for fold in np.array_split(perm, folds):
        train = np.ones(n, dtype=bool)
        train[fold] = False
        Xs, yc, mean, scale, keep = _standardize(X[train], y[train])
        Xv = (X[fold][:, keep] - mean[keep]) / scale[keep]
        for i, w in enumerate(_path(Xs, yc, alphas, tol, max_sweeps)):
            resid = y[fold] - y[train].mean() - Xv @ w
            mse[i] += np.sum(resid ** 2) / n

    best = int(np.argmin(mse))
    Xs, yc, mean, scale, keep = _standardize(X, y)
    w_std = _path(Xs, yc, alphas[: best + 1], tol, max_sweeps)[-1]
    weights = np.zeros(X.shape[1])
    weights[keep] = w_std / scale[keep]
    bias = float(y.mean() - mean @ weights)
    return LinearModel(weights, bias, float(alphas[best]), alphas, mse)


def predict_linear(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return X @ model.weights + model.bias
