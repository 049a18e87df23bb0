"""
Fixed-length feature vectors built from the per-user SVDs of a channel object.

Three schemes are supported:

``default``
    squared singular values of every user's selected layers, then the
    squared layer correlations of every ordered user pair ``(i, j), i != j``.
``sorted``
    the same values, with users ordered by their largest squared singular
    value and user-pair blocks ordered by their largest correlation, so the
    vector does not depend on how users are numbered.
``poly<k>``
    elementary symmetric polynomials ``e_1 .. e_k`` of the squared singular
    values and, separately, of the correlations; the length is ``2 k``
    whatever the number of users.

SUSINR and the noise variance may be appended as extra columns.
"""

import re
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .channels import ChannelObject
from .mimo import susinr_from_sq


class FeatureSpecError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    scheme: str = "sorted"
    k: int = 3
    include_susinr: bool = False
    include_sigma2: bool = False

    def __post_init__(self):
        if self.scheme not in ("default", "sorted", "poly"):
            raise FeatureSpecError(f"unknown feature scheme {self.scheme!r}")
        if self.scheme == "poly" and self.k < 1:
            raise FeatureSpecError("poly_k requires k >= 1")

    @classmethod
    def parse(cls, text: str, include_susinr=False, include_sigma2=False) -> "FeatureSpec":
        """Parse ``'default'``, ``'sorted'`` or ``'poly3'`` style names."""
        text = text.strip().lower().replace("_", "")
        m = re.fullmatch(r"poly(\d+)", text)
        if m:
            return cls("poly", int(m.group(1)), include_susinr, include_sigma2)
        return cls(text, 3, include_susinr, include_sigma2)

    @property
    def name(self) -> str:
        return f"poly{self.k}" if self.scheme == "poly" else self.scheme

    @property
    def fixed_k(self) -> bool:
        return self.scheme != "poly"

    def length(self, K: int = None, layers_per_user: int = 2) -> int:
        extra = int(self.include_susinr) + int(self.include_sigma2)
        if self.scheme == "poly":
            return 2 * self.k + extra
        if K is None:
            raise FeatureSpecError(f"{self.scheme} features need a fixed K")
        Lk = layers_per_user
        return K * Lk + K * (K - 1) * Lk * Lk + extra


@dataclass
class RawFeatures:
    """Squared singular values ``(K, L_k)`` and the full squared correlation
    tensor ``(K, K, L_k, L_k)``; ``correlations[i, j, a, b]`` relates layer
    ``a`` of user ``i`` to layer ``b`` of user ``j``. Diagonal user blocks are
    not features and are ignored by every layout."""

    singular_sq: np.ndarray
    correlations: np.ndarray
    sigma2: float

    @property
    def K(self) -> int:
        return self.singular_sq.shape[0]

    def pairs(self) -> List[tuple]:
        K = self.K
        return [(i, j) for i in range(K) for j in range(K) if i != j]

    def pair_blocks(self) -> np.ndarray:
        """``(K (K - 1), L_k, L_k)`` blocks of the ordered user pairs."""
        K = self.K
        mask = ~np.eye(K, dtype=bool)
        return self.correlations[mask]

    def susinr(self) -> float:
        return susinr_from_sq(self.singular_sq, self.sigma2)


def extract_raw(obj: ChannelObject) -> RawFeatures:
    Lk = obj.layers_per_user
    s, vh = np.linalg.svd(obj.H, full_matrices=False, compute_uv=True)[1:]
    if np.any(s[:, Lk - 1] <= 1e-12 * s[:, 0]):
        raise np.linalg.LinAlgError(f"some user channel has rank below {Lk}")
    V = vh[:, :Lk, :].reshape(obj.K * Lk, obj.T)
    gram = np.abs(V @ V.conj().T) ** 2
    corr = gram.reshape(obj.K, Lk, obj.K, Lk).transpose(0, 2, 1, 3)
    return RawFeatures(s[:, :Lk] ** 2, corr, obj.sigma2)


def sort_raw(raw: RawFeatures) -> tuple:
    """Permutation-invariant ordering of the raw values.

    Returns ``(singular_sq, pair_blocks)`` where ``singular_sq`` is ``(K, L_k)``
    with users ordered by descending largest value and ``pair_blocks`` is
    ``(K (K - 1), L_k * L_k)`` with blocks ordered by descending maximum and
    entries descending within a block. Ties keep the original order.
    """
    s2 = -np.sort(-raw.singular_sq, axis=1)
    users = np.argsort(-s2[:, 0], kind="stable")
    blocks = raw.pair_blocks().reshape(raw.K * (raw.K - 1), -1)
    blocks = -np.sort(-blocks, axis=1)
    order = np.argsort(-blocks[:, 0], kind="stable")
    return s2[users], blocks[order]


def elementary_symmetric(values: Sequence[float], k: int) -> np.ndarray:
    """``e_1 .. e_k`` of the multiset ``values`` via incremental expansion
    of ``prod (1 + x_i t)``; trailing axes hold the sequence, so a batch of
    sequences can be passed as a 2-D array. Values are sorted first so the
    result is bit-identical for any ordering of the multiset."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.sort(np.asarray(values, dtype=float), axis=-1)
    e = np.zeros(x.shape[:-1] + (k + 1,))
    e[..., 0] = 1.0
    for i in range(x.shape[-1]):
        e[..., 1:] = e[..., 1:] + x[..., i, None] * e[..., :-1]
    return e[..., 1:]


def _extras(raw: RawFeatures, spec: FeatureSpec) -> list:
    out = []
    if spec.include_susinr:
        out.append(raw.susinr())
    if spec.include_sigma2:
        out.append(raw.sigma2)
    return out


def assemble_raw(raw: RawFeatures, spec: FeatureSpec) -> np.ndarray:
    if spec.scheme == "default":
        body = [raw.singular_sq.ravel(), raw.pair_blocks().ravel()]
    elif spec.scheme == "sorted":
        s2, blocks = sort_raw(raw)
        body = [s2.ravel(), blocks.ravel()]
    else:
        body = [elementary_symmetric(raw.singular_sq.ravel(), spec.k),
                elementary_symmetric(raw.pair_blocks().ravel(), spec.k)]
    return np.concatenate(body + [np.asarray(_extras(raw, spec), dtype=float)])


def assemble(obj: ChannelObject, spec: FeatureSpec) -> np.ndarray:
    return assemble_raw(extract_raw(obj), spec)


def featurize(objects, spec: FeatureSpec) -> np.ndarray:
    """Stack feature vectors of a dataset; fixed-K schemes reject mixed K."""
    objects = list(objects)
    if spec.fixed_k and len({o.K for o in objects}) > 1:
        raise FeatureSpecError(f"{spec.name} features require the same K for every object")
    return np.stack([assemble(o, spec) for o in objects])


def feature_names(spec: FeatureSpec, K: int = None, layers_per_user: int = 2) -> List[str]:
    Lk = layers_per_user
    if spec.scheme == "poly":
        names = [f"e{j}_s2" for j in range(1, spec.k + 1)]
        names += [f"e{j}_corr" for j in range(1, spec.k + 1)]
    else:
        if K is None:
            raise FeatureSpecError(f"{spec.scheme} features need a fixed K")
        u = "u" if spec.scheme == "default" else "rank"
        names = [f"s2_{u}{i}_l{a}" for i in range(K) for a in range(Lk)]
        if spec.scheme == "default":
            names += [f"c_u{i}_u{j}_l{a}_l{b}" for i in range(K) for j in range(K) if i != j
                      for a in range(Lk) for b in range(Lk)]
        else:
            names += [f"c_pair{p}_r{r}" for p in range(K * (K - 1)) for r in range(Lk * Lk)]
    if spec.include_susinr:
        names.append("susinr")
    if spec.include_sigma2:
        names.append("sigma2")
    return names


# --- per-user features ----------------------------------------------------

def assemble_user_raw(raw: RawFeatures, spec: FeatureSpec) -> np.ndarray:
    """One row per user: the user's own squared singular values and the
    correlations between its layers and the layers of every other user."""
    K = raw.K
    rows = []
    extras = _extras(raw, spec)
    for u in range(K):
        own = raw.singular_sq[u]
        blocks = raw.correlations[u][np.arange(K) != u]
        blocks = blocks.reshape(K - 1, blocks.shape[-1] ** 2)
        if spec.scheme == "default":
            body = [own, blocks.ravel()]
        elif spec.scheme == "sorted":
            blocks = -np.sort(-blocks, axis=1)
            blocks = blocks[np.argsort(-blocks[:, 0], kind="stable")]
            body = [-np.sort(-own), blocks.ravel()]
        else:
            body = [elementary_symmetric(own, spec.k),
                    elementary_symmetric(blocks.ravel(), spec.k)]
        rows.append(np.concatenate(body + [np.asarray(extras, dtype=float)]))
    return np.stack(rows)


def featurize_users(objects, spec: FeatureSpec) -> np.ndarray:
    """Stack per-user rows of a dataset, object by object, users in order."""
    objects = list(objects)
    if spec.fixed_k and len({o.K for o in objects}) > 1:
        raise FeatureSpecError(f"{spec.name} features require the same K for every object")
    return np.concatenate([assemble_user_raw(extract_raw(o), spec) for o in objects])


# --- normalization --------------------------------------------------------

@dataclass
class NormalizationStats:
    """Training-set moments; columns with zero spread are dropped."""

    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0

    @property
    def dropped(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X[:, self.keep] - self.mean[self.keep]) / self.std[self.keep]

    def inverse_transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        X = np.tile(self.mean, (Z.shape[0], 1))
        X[:, self.keep] = Z * self.std[self.keep] + self.mean[self.keep]
        return X

    def transform_target(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def inverse_target(self, t) -> np.ndarray:
        return np.asarray(t, dtype=float) * self.target_std + self.target_mean


def fit_normalizer(X, y=None) -> NormalizationStats:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(keep, std, 1.0)
    stats = NormalizationStats(mean, std, keep)
    if y is not None:
        y = np.asarray(y, dtype=float)
        t_std = float(y.std())
        if not t_std > 1e-12 * max(1.0, abs(float(y.mean()))):
            raise ValueError("target has zero variance")
        stats.target_mean, stats.target_std = float(y.mean()), t_std
    return stats


def apply_normalizer(stats: NormalizationStats, values, direction: str = "forward",
                     kind: str = "features") -> np.ndarray:
    if kind == "features":
        fn = stats.transform if direction == "forward" else stats.inverse_transform
    elif kind == "targets":
        fn = stats.transform_target if direction == "forward" else stats.inverse_target
    else:
        raise ValueError(kind)
    if direction not in ("forward", "inverse"):
        raise ValueError(direction)
    return fn(values)
