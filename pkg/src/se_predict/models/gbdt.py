"""
Gradient boosting on the absolute-error loss with oblivious decision trees.

Every tree applies the same ``(feature, threshold)`` test to all nodes of a
level, so a tree of depth ``d`` is a list of ``d`` tests and a table of
``2**d`` leaf values; the leaf index of a sample is the bit pattern of its
test outcomes. Split candidates are quantile borders of each feature
computed once on the training set.

Each iteration fits the tree structure to the signs of the residuals on a
random subsample and sets every leaf to the median residual of its samples,
shrunk by ``n / (n + l2_leaf_reg)`` and scaled by the learning rate.
"""

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

log = logging.getLogger(__name__)


@dataclass
class GbdtParams:
    iterations: int = 1000
    depth: int = 6
    learning_rate: float = 0.03
    subsample: float = 0.8
    l2_leaf_reg: float = 3.0
    border_count: int = 254
    seed: int = 228

    def __post_init__(self):
        if self.iterations < 0 or self.depth < 1:
            raise ValueError("iterations must be >= 0 and depth >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.l2_leaf_reg < 0:
            raise ValueError("l2_leaf_reg must be >= 0")
        if not 1 <= self.border_count <= 254:
            raise ValueError("border_count must lie in [1, 254]")


@dataclass
class GbdtModel:
    base: float
    split_features: np.ndarray  # (n_trees, depth) int
    thresholds: np.ndarray      # (n_trees, depth) float
    leaf_values: np.ndarray     # (n_trees, 2**depth)
    n_features: int
    params: GbdtParams = field(default_factory=GbdtParams)
    train_mae: np.ndarray = field(default_factory=lambda: np.empty(0))

    family = "gbdt"

    @property
    def n_trees(self) -> int:
        return self.leaf_values.shape[0]

    def predict(self, X) -> np.ndarray:
        return predict_gbdt(self, X)

    def _state(self):
        meta = {"base": self.base, "n_features": self.n_features, "params": asdict(self.params)}
        return meta, {"split_features": self.split_features, "thresholds": self.thresholds,
                      "leaf_values": self.leaf_values, "train_mae": self.train_mae}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(meta["base"], arrays["split_features"].astype(np.int64), arrays["thresholds"],
                   arrays["leaf_values"], meta["n_features"], GbdtParams(**meta["params"]),
                   arrays["train_mae"])


def quantile_borders(x: np.ndarray, border_count: int) -> np.ndarray:
    """Candidate thresholds for one feature: midpoints between distinct values
    when there are few of them, otherwise interior quantiles."""
    u = np.unique(x)
    if len(u) <= border_count + 1:
        return (u[:-1] + u[1:]) / 2
    q = np.quantile(x, np.linspace(0, 1, border_count + 2)[1:-1])
    return np.unique(q)


@njit(cache=True)
def _best_split(binned, g, leaf, n_leaves, n_borders, lam):
    """Best ``(feature, border)`` for one oblivious level.

    ``binned`` is ``(m, F)`` Fortran-ordered bin indices of the subsample; the
    score is the L2-regularized least-squares gain summed over all leaves.
    """
    m, F = binned.shape
    B = n_borders.max() + 1
    G = np.zeros((n_leaves, B))
    C = np.zeros((n_leaves, B))
    gt = np.zeros(n_leaves)
    ct = np.zeros(n_leaves)
    for i in range(m):
        gt[leaf[i]] += g[i]
        ct[leaf[i]] += 1.0
    gl = np.zeros(n_leaves)
    cl = np.zeros(n_leaves)
    best, best_f, best_j = -np.inf, -1, -1
    for f in range(F):
        G[:, :] = 0.0
        C[:, :] = 0.0
        for i in range(m):
            G[leaf[i], binned[i, f]] += g[i]
            C[leaf[i], binned[i, f]] += 1.0
        gl[:] = 0.0
        cl[:] = 0.0
        for j in range(n_borders[f]):
            score = 0.0
            for node in range(n_leaves):
                gl[node] += G[node, j]
                cl[node] += C[node, j]
                if cl[node] > 0:
                    score += gl[node] * gl[node] / (cl[node] + lam)
                cr = ct[node] - cl[node]
                if cr > 0:
                    gr = gt[node] - gl[node]
                    score += gr * gr / (cr + lam)
            if score > best:
                best, best_f, best_j = score, f, j
    return best_f, best_j


def _leaf_medians(leaf: np.ndarray, resid: np.ndarray, n_leaves: int):
    order = np.lexsort((resid, leaf))
    counts = np.bincount(leaf, minlength=n_leaves)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    lo = starts + (counts - 1) // 2
    hi = starts + counts // 2
    sorted_r = resid[order]
    filled = counts > 0
    med = np.zeros(n_leaves)
    med[filled] = 0.5 * (sorted_r[lo[filled]] + sorted_r[hi[filled]])
    return med, counts


def train_gbdt(X, y, params: GbdtParams = None, **overrides) -> GbdtModel:
    """Fit a boosted ensemble of oblivious trees to the absolute-error loss."""
    params = GbdtParams(**{**asdict(params or GbdtParams()), **overrides})
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, F = X.shape
    if n < 10:
        raise ValueError("need at least 10 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")

    borders = [quantile_borders(X[:, f], params.border_count) for f in range(F)]
    n_borders = np.array([len(b) for b in borders], dtype=np.int64)
    # bin = number of borders strictly below x, so "bin > j" <=> "x > borders[j]"
    binned = np.stack([np.searchsorted(b, X[:, f], side="left") for f, b in enumerate(borders)],
                      axis=1).astype(np.int64)

    depth, lam, lr = params.depth, params.l2_leaf_reg, params.learning_rate
    n_leaves = 2 ** depth
    m = max(1, int(round(params.subsample * n)))
    rng = np.random.default_rng(params.seed)

    base = float(np.median(y))
    pred = np.full(n, base)
    feats = np.zeros((params.iterations, depth), dtype=np.int64)
    thr = np.zeros((params.iterations, depth))
    values = np.zeros((params.iterations, n_leaves))
    history = np.empty(params.iterations)

    for it in range(params.iterations):
        resid = y - pred
        rows = np.sort(rng.choice(n, m, replace=False)) if m < n else np.arange(n)
        g = np.sign(resid[rows])
        sub = np.asfortranarray(binned[rows])
        leaf = np.zeros(m, dtype=np.int64)
        for d in range(depth):
            f, j = _best_split(sub, g, leaf, 2 ** d, n_borders, lam)
            if f < 0:
                # every feature is constant: route all samples left
                feats[it, d], thr[it, d] = 0, np.inf
                continue
            feats[it, d] = f
            thr[it, d] = borders[f][j]
            leaf |= (sub[:, f] > j).astype(np.int64) << d

        med, counts = _leaf_medians(leaf, resid[rows], n_leaves)
        values[it] = lr * med * counts / (counts + lam)

        full_leaf = ((X[:, feats[it]] > thr[it]) * (1 << np.arange(depth))).sum(axis=1)
        pred += values[it][full_leaf]
        history[it] = np.mean(np.abs(y - pred))
        if not np.isfinite(history[it]):
            raise FloatingPointError(f"non-finite loss at iteration {it}")

    log.debug("gbdt: %d trees, final train MAE %.4g", params.iterations,
              history[-1] if len(history) else np.nan)
    return GbdtModel(base, feats, thr, values, F, params, history)


def predict_gbdt(model: GbdtModel, X, chunk: int = 2048) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.full(X.shape[0], model.base)
    if model.n_trees == 0:
        return out
    weights = 1 << np.arange(model.split_features.shape[1])
    trees = np.arange(model.n_trees)
    for start in range(0, X.shape[0], chunk):
        xs = X[start:start + chunk]
        bits = xs[:, model.split_features] > model.thresholds
        leaf = bits @ weights
        out[start:start + chunk] += model.leaf_values[trees, leaf].sum(axis=1)
    return out
