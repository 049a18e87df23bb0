"""
Ground-truth downlink pipeline: per-user SVD, MRT/ZF precoding under a
per-antenna power constraint, MMSE and MMSE-IRC detection, layer SINR and
spectral efficiency.

Conventions
-----------
A user channel factors as ``H_k = U^H diag(S) V`` with ``U`` unitary
``(R, R)`` and ``V`` semi-unitary ``(R, T)``. Precoders are ``(T, L)``
matrices whose columns are ordered user by user, ``L_k`` columns each.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .channels import ChannelObject

MAX_GRAM_COND = 1e12


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass
class SvdDecomposition:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


@dataclass
class ReducedBasis:
    """Top-``L_k`` right singular rows of every user, stacked in user order."""

    V_tilde: np.ndarray
    S_tilde: np.ndarray
    layers_per_user: int

    @property
    def K(self) -> int:
        return len(self.S_tilde) // self.layers_per_user


@dataclass
class PrecodingMatrix:
    W: np.ndarray
    mu: float
    P: np.ndarray  # diagonal of the column normalizer
    method: str


@dataclass
class DetectionSet:
    G: List[np.ndarray]
    method: str


@dataclass
class SeReport:
    se_avg: float
    se_user: np.ndarray
    sinr_layers: np.ndarray
    susinr: float
    sigma2: float


def svd_per_user(Hk: np.ndarray) -> SvdDecomposition:
    """SVD of one user channel with a fixed phase convention.

    The first nonzero entry of every row of ``V`` is made real and positive,
    and ``U`` absorbs the compensating phase, so the factors are unique for
    distinct singular values.
    """
    Hk = np.asarray(Hk, dtype=np.complex128)
    if Hk.ndim != 2:
        raise ValueError("H_k must be a matrix")
    if not np.all(np.isfinite(Hk)):
        raise ValueError("H_k contains non-finite entries")
    u, s, vh = np.linalg.svd(Hk, full_matrices=False)
    R = Hk.shape[0]
    if vh.shape[0] < R:
        raise ValueError("H_k must have at least as many columns as rows")

    mags = np.abs(vh)
    first = np.argmax(mags > 1e-14 * mags.max(axis=1, keepdims=True), axis=1)
    pivot = vh[np.arange(R), first]
    # rows of vh are unit vectors, so the pivot is never zero
    phase = pivot / np.abs(pivot)
    vh = vh * phase.conj()[:, None]
    u = u * phase[None, :]
    return SvdDecomposition(U=u.conj().T, S=s, V=vh)


def build_reduced_basis(obj: ChannelObject) -> ReducedBasis:
    Lk = obj.layers_per_user
    rows, svals = [], []
    for k in range(obj.K):
        dec = svd_per_user(obj.H[k])
        if dec.S[Lk - 1] <= 1e-12 * dec.S[0]:
            raise np.linalg.LinAlgError(f"user {k}: channel rank below {Lk}")
        rows.append(dec.V[:Lk])
        svals.append(dec.S[:Lk])
    return ReducedBasis(np.concatenate(rows), np.concatenate(svals), Lk)


def _normalize(raw: np.ndarray, T: int, method: str) -> PrecodingMatrix:
    norms = np.linalg.norm(raw, axis=0)
    assert np.all(norms > 0), "zero precoder column"
    p = 1.0 / norms
    unit = raw * p
    # largest mu with max_i ||row_i||^2 * mu^2 == 1/T
    mu = 1.0 / np.sqrt(T * np.max(np.sum(np.abs(unit) ** 2, axis=1)))
    return PrecodingMatrix(W=mu * unit, mu=float(mu), P=p, method=method)


def precode_mrt(basis: ReducedBasis, T: int = None) -> PrecodingMatrix:
    T = basis.V_tilde.shape[1] if T is None else T
    return _normalize(basis.V_tilde.conj().T, T, "MRT")


def precode_zf(basis: ReducedBasis, T: int = None) -> PrecodingMatrix:
    T = basis.V_tilde.shape[1] if T is None else T
    V = basis.V_tilde
    gram = V @ V.conj().T
    if np.linalg.cond(gram) >= MAX_GRAM_COND:
        raise ConditioningError("V V^H is near-singular; users are not separable by ZF")
    # V^H (V V^H)^{-1} == (solve(gram^H, V))^H, gram is Hermitian
    raw = np.linalg.solve(gram, V).conj().T
    return _normalize(raw, T, "ZF")


def precode(basis: ReducedBasis, method: str, T: int = None) -> PrecodingMatrix:
    method = method.upper()
    if method == "MRT":
        return precode_mrt(basis, T)
    if method == "ZF":
        return precode_zf(basis, T)
    raise ValueError(f"unknown precoder {method!r}")


def detect_mmse(Hk: np.ndarray, Wk: np.ndarray, sigma2: float) -> np.ndarray:
    """MMSE receive filter ``A^H (A A^H + sigma2 I)^{-1}`` with ``A = H_k W_k``."""
    A = np.asarray(Hk) @ np.asarray(Wk)
    cov = A @ A.conj().T + sigma2 * np.eye(A.shape[0])
    # A^H cov^{-1} == solve(cov, A)^H since cov is Hermitian
    return np.linalg.solve(cov, A).conj().T


def interference_covariance(Hk: np.ndarray, W: np.ndarray, user: int, layers_per_user: int,
                            form: str = "difference") -> np.ndarray:
    """Covariance of the other users' signals seen at user ``user``.

    ``form='difference'`` uses ``H (W W^H - W_k W_k^H) H^H``; ``form='sum'``
    sums ``W_u W_u^H`` over the other users explicitly.
    """
    cols = slice(user * layers_per_user, (user + 1) * layers_per_user)
    if form == "difference":
        Wk = W[:, cols]
        inner = W @ W.conj().T - Wk @ Wk.conj().T
    elif form == "sum":
        inner = np.zeros((W.shape[0], W.shape[0]), dtype=np.complex128)
        for u in range(W.shape[1] // layers_per_user):
            if u != user:
                Wu = W[:, u * layers_per_user:(u + 1) * layers_per_user]
                inner += Wu @ Wu.conj().T
    else:
        raise ValueError(form)
    return Hk @ inner @ Hk.conj().T


def detect_mmse_irc(Hk: np.ndarray, W: np.ndarray, user: int, sigma2: float,
                    layers_per_user: int = 2) -> np.ndarray:
    """MMSE receiver that whitens the explicit inter-user interference."""
    Wk = W[:, user * layers_per_user:(user + 1) * layers_per_user]
    A = Hk @ Wk
    Ruu = interference_covariance(Hk, W, user, layers_per_user)
    cov = A @ A.conj().T + Ruu + sigma2 * np.eye(A.shape[0])
    return np.linalg.solve(cov, A).conj().T


def detect(obj: ChannelObject, prec: PrecodingMatrix, method: str) -> DetectionSet:
    method = method.upper().replace("-", "_")
    Lk, W = obj.layers_per_user, prec.W
    G = []
    for k in range(obj.K):
        if method == "MMSE":
            G.append(detect_mmse(obj.H[k], W[:, k * Lk:(k + 1) * Lk], obj.sigma2))
        elif method in ("MMSE_IRC", "IRC"):
            G.append(detect_mmse_irc(obj.H[k], W, k, obj.sigma2, Lk))
        else:
            raise ValueError(f"unknown detector {method!r}")
    return DetectionSet(G, "MMSE" if method == "MMSE" else "MMSE_IRC")


def sinr_layer(W: np.ndarray, Hk: np.ndarray, g: np.ndarray, l: int, sigma2: float) -> float:
    """SINR of layer ``l`` (a column index of ``W``) seen through filter row ``g``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    gains = np.abs(np.asarray(g) @ np.asarray(Hk) @ np.asarray(W)) ** 2
    signal = gains[l]
    interference = np.sum(np.delete(gains, l))
    return float(signal / (interference + sigma2 * np.sum(np.abs(g) ** 2)))


def user_layer_sinrs(W: np.ndarray, Hk: np.ndarray, Gk: np.ndarray, user: int,
                     sigma2: float) -> np.ndarray:
    """Vectorized ``sinr_layer`` over the ``L_k`` layers of one user."""
    Lk = Gk.shape[0]
    gains = np.abs(Gk @ Hk @ W) ** 2
    own = np.arange(Lk) + user * Lk
    signal = gains[np.arange(Lk), own]
    gains[np.arange(Lk), own] = 0.0
    noise = sigma2 * np.sum(np.abs(Gk) ** 2, axis=1)
    return signal / (gains.sum(axis=1) + noise)


def sinr_eff(sinrs: Sequence[float]) -> float:
    """Geometric mean of a user's layer SINRs; 0 if any layer is 0."""
    x = np.asarray(sinrs, dtype=float)
    if np.any(x < 0):
        raise ValueError("SINRs must be non-negative")
    if np.any(x == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(x))))


def se_from_layer_sinrs(sinr_layers: np.ndarray, K: int):
    """Average and per-user SE from the flat, user-ordered layer SINRs."""
    per_user = np.asarray(sinr_layers, dtype=float).reshape(K, -1)
    Lk = per_user.shape[1]
    se_user = np.array([np.log2(1.0 + sinr_eff(row)) for row in per_user])
    return float(Lk * se_user.sum() / K), se_user


def susinr(basis: ReducedBasis, sigma2: float) -> float:
    """Single-user SINR proxy built from the selected singular values.

    Evaluates ``(1/sigma2) * (prod_k (1/L_k) * (prod_l s_l^2)^(1/L_k))^(1/K)``
    in the log domain.
    """
    Lk = basis.layers_per_user
    s2 = np.asarray(basis.S_tilde, dtype=float).reshape(-1, Lk) ** 2
    return susinr_from_sq(s2, sigma2)


def susinr_from_sq(s2: np.ndarray, sigma2: float) -> float:
    """SUSINR from a ``(K, L_k)`` array of squared singular values."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 == 0):
        return 0.0
    per_user = np.log(1.0 / s2.shape[1]) + np.mean(np.log(s2), axis=1)
    # sorted so that the user order cannot change the rounding
    return float(np.exp(np.mean(np.sort(per_user))) / sigma2)


def spectral_efficiency(obj: ChannelObject, W, G, basis: ReducedBasis = None) -> SeReport:
    """Evaluate every layer SINR and the derived SE figures for one object."""
    W = W.W if isinstance(W, PrecodingMatrix) else W
    G = G.G if isinstance(G, DetectionSet) else G
    sinrs = np.concatenate([user_layer_sinrs(W, obj.H[k], G[k], k, obj.sigma2)
                            for k in range(obj.K)])
    se_avg, se_user = se_from_layer_sinrs(sinrs, obj.K)
    if basis is None:
        basis = build_reduced_basis(obj)
    return SeReport(se_avg=se_avg, se_user=se_user, sinr_layers=sinrs,
                    susinr=susinr(basis, obj.sigma2), sigma2=obj.sigma2)


def label_object(obj: ChannelObject, precoder: str = "ZF", detector: str = "MMSE") -> SeReport:
    """Full ground-truth computation for one object."""
    basis = build_reduced_basis(obj)
    prec = precode(basis, precoder, obj.T)
    dets = detect(obj, prec, detector)
    return spectral_efficiency(obj, prec, dets, basis)
