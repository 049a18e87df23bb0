"""
Synthetic multi-user downlink channel generator and dataset persistence.

Two generator families are provided:

* a clustered geometric model (``urban_analog`` / ``rural_analog``) in which
  each user channel is a sum of planar-wavefront steering-vector outer
  products with complex Gaussian path gains, and
* an i.i.d. Rayleigh model (``iid``) with standard complex Gaussian entries.

Both are normalized so that every channel entry has unit average power.
Every draw is a pure function of ``(config, K, sample_index)``.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _container
from ._container import ChecksumError, ContainerError, VersionError  # noqa: F401

log = logging.getLogger(__name__)

NUM_TX = 64
NUM_RX = 4
LAYERS_PER_USER = 2
MAX_RETRIES = 8
# smallest accepted ratio s_L / s_1 for a user channel to count as rank >= L
RANK_RTOL = 1e-10

SCENARIO_KINDS = ("urban_analog", "rural_analog", "iid")

_DS_MAGIC = b"SEDS"
_DS_VERSION = 1


class ChannelGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of the synthetic channel generator.

    Parameters
    ----------
    scenario_kind : {'urban_analog', 'rural_analog', 'iid'}
    num_paths : int
        Number of multipath components per user (geometric kinds only).
    angular_spread_deg : float
        Standard deviation of the per-path departure angle around the user's
        mean direction, in degrees.
    los_probability : float
        Probability that the first path of a user is a line-of-sight path.
    path_gain_decay : float
        Exponential decay rate of the path power profile.
    noise_variance_range : (float, float)
        Bounds of the log-uniform noise variance distribution.
    seed : int
        Master seed; together with the sample index it fixes every draw.
    """

    scenario_kind: str = "urban_analog"
    num_paths: int = 20
    angular_spread_deg: float = 10.0
    los_probability: float = 0.1
    path_gain_decay: float = 0.15
    noise_variance_range: tuple = (1e-3, 1.0)
    seed: int = 0
    # LOS path power relative to the scattered power (linear Rician factor)
    los_factor: float = field(default=3.0, repr=False)

    def __post_init__(self):
        if self.scenario_kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario_kind {self.scenario_kind!r}")
        if int(self.num_paths) < 1:
            raise ValueError("num_paths must be a positive integer")
        if not self.angular_spread_deg > 0:
            raise ValueError("angular_spread_deg must be > 0")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ValueError("los_probability must lie in [0, 1]")
        if not self.path_gain_decay > 0:
            raise ValueError("path_gain_decay must be > 0")
        lo, hi = self.noise_variance_range
        if not (0 < lo <= hi):
            raise ValueError("noise_variance_range must satisfy 0 < min <= max")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def urban(cls, seed=0, **overrides):
        """Dense scattering, wide angular spread, rare line of sight."""
        params = dict(scenario_kind="urban_analog", num_paths=20, angular_spread_deg=10.0,
                      los_probability=0.1, path_gain_decay=0.15, seed=seed)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def rural(cls, seed=0, **overrides):
        """Few paths, narrow angular spread, frequent line of sight."""
        params = dict(scenario_kind="rural_analog", num_paths=6, angular_spread_deg=3.0,
                      los_probability=0.6, path_gain_decay=0.5, seed=seed)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def iid(cls, seed=0, **overrides):
        params = dict(scenario_kind="iid", seed=seed)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def from_name(cls, name: str, seed=0, **overrides):
        presets = {"urban": cls.urban, "urban_analog": cls.urban,
                   "rural": cls.rural, "rural_analog": cls.rural,
                   "iid": cls.iid}
        try:
            return presets[name](seed=seed, **overrides)
        except KeyError:
            raise ValueError(f"unknown scenario {name!r}") from None


@dataclass(eq=False)
class ChannelObject:
    """One sample: the channels of all ``K`` users served together.

    ``H`` has shape ``(K, R, T)``; ``H[k]`` is the channel from the ``T``
    base-station antennas to the ``R`` antennas of user ``k``.
    """

    H: np.ndarray
    sigma2: float
    scenario_tag: str = ""
    layers_per_user: int = LAYERS_PER_USER

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        if self.H.ndim != 3:
            raise ValueError("H must have shape (K, R, T)")
        K, R, T = self.H.shape
        if not (1 <= self.layers_per_user <= R <= T):
            raise ValueError(f"need L_k <= R <= T, got L_k={self.layers_per_user}, R={R}, T={T}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def R(self) -> int:
        return self.H.shape[1]

    @property
    def T(self) -> int:
        return self.H.shape[2]

    @property
    def L(self) -> int:
        return self.K * self.layers_per_user

    def permuted(self, order: Sequence[int]) -> "ChannelObject":
        """Copy with users reordered as ``order``."""
        return ChannelObject(self.H[list(order)].copy(), self.sigma2, self.scenario_tag,
                             self.layers_per_user)


def _rng(cfg: ScenarioConfig, index: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(cfg.seed), spawn_key=(int(index), stream))
    return np.random.default_rng(seq)


def _steering(n: int, angles: np.ndarray) -> np.ndarray:
    """Unit-norm half-wavelength ULA response, one column per angle."""
    pos = np.arange(n)[:, None]
    return np.exp(1j * np.pi * pos * np.sin(angles)[None, :]) / np.sqrt(n)


def draw_user_channel(cfg: ScenarioConfig, rng: np.random.Generator,
                      R: int = NUM_RX, T: int = NUM_TX) -> np.ndarray:
    """One raw ``(R, T)`` user channel draw, before any rank check."""
    if cfg.scenario_kind == "iid":
        return (rng.standard_normal((R, T)) + 1j * rng.standard_normal((R, T))) / np.sqrt(2.0)

    P = int(cfg.num_paths)
    spread = np.deg2rad(cfg.angular_spread_deg)
    center = rng.uniform(-np.pi / 3, np.pi / 3)
    aod = center + spread * rng.standard_normal(P)
    # the handset sees scattering from all around
    aoa = rng.uniform(-np.pi / 2, np.pi / 2, P)

    power = np.exp(-cfg.path_gain_decay * np.arange(P))
    gains = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / np.sqrt(2.0)
    if rng.uniform() < cfg.los_probability:
        power[0] += cfg.los_factor * power.sum()
        gains[0] = np.exp(1j * rng.uniform(0, 2 * np.pi))
        aod[0] = center
    gains *= np.sqrt(power / power.sum())

    a_rx = _steering(R, aoa)
    a_tx = _steering(T, aod)
    return np.sqrt(R * T) * (a_rx * gains) @ a_tx.conj().T


def _has_rank(Hk: np.ndarray, L: int) -> bool:
    s = np.linalg.svd(Hk, compute_uv=False)
    return s[0] > 0 and s[L - 1] > RANK_RTOL * s[0]


def generate_channel(cfg: ScenarioConfig, K: int, sample_index: int, *,
                     R: int = NUM_RX, T: int = NUM_TX,
                     layers_per_user: int = LAYERS_PER_USER) -> ChannelObject:
    """Draw the channel object number ``sample_index`` with ``K`` users.

    Users whose channel has rank below ``layers_per_user`` are redrawn up to
    ``MAX_RETRIES`` times from the same random stream.

    Raises
    ------
    ChannelGenerationError
        If some user stays rank deficient after all retries.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not (layers_per_user <= R <= T):
        raise ValueError("need layers_per_user <= R <= T")
    rng = _rng(cfg, sample_index, 0)
    lo, hi = cfg.noise_variance_range
    sigma2 = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else float(lo)

    H = np.empty((K, R, T), dtype=np.complex128)
    for k in range(K):
        for attempt in range(MAX_RETRIES + 1):
            Hk = draw_user_channel(cfg, rng, R, T)
            if _has_rank(Hk, layers_per_user):
                break
            log.debug("sample %d user %d: rank-deficient draw (attempt %d)",
                      sample_index, k, attempt + 1)
        else:
            raise ChannelGenerationError(
                f"sample {sample_index}, user {k}: rank < {layers_per_user} "
                f"after {MAX_RETRIES + 1} attempts")
        H[k] = Hk
    return ChannelObject(H, sigma2, cfg.scenario_kind, layers_per_user)


def generate_dataset(cfg: ScenarioConfig, N: int, K_spec, *, start: int = 0,
                     **kwargs) -> list:
    """Generate ``N`` channel objects with sample indices ``start .. start+N-1``.

    ``K_spec`` is either a fixed user count or a collection of user counts, in
    which case each object draws its ``K`` uniformly from the collection.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    return [generate_channel(cfg, user_count(cfg, K_spec, index), index, **kwargs)
            for index in range(start, start + N)]


def user_count(cfg: ScenarioConfig, K_spec, sample_index: int) -> int:
    """``K`` for one sample: ``K_spec`` itself if it is an integer, otherwise a
    uniform pick from the collection, fixed by ``(cfg.seed, sample_index)``."""
    if isinstance(K_spec, (int, np.integer)):
        if K_spec < 1:
            raise ValueError("K must be >= 1")
        return int(K_spec)
    choices = sorted({int(k) for k in K_spec})
    if not choices:
        raise ValueError("K_spec must be nonempty")
    if len(choices) == 1:
        return choices[0]
    return choices[int(_rng(cfg, sample_index, 1).integers(len(choices)))]


# --- persistence ----------------------------------------------------------

def _dims(objects) -> tuple:
    first = objects[0]
    T, R, Lk = first.T, first.R, first.layers_per_user
    for obj in objects:
        if (obj.T, obj.R, obj.layers_per_user) != (T, R, Lk):
            raise ValueError("all objects in a dataset must share T, R and L_per_user")
    return T, R, Lk


def dumps_dataset(objects: Iterable[ChannelObject]) -> bytes:
    objects = list(objects)
    if not objects:
        raise ValueError("cannot save an empty dataset")
    T, R, Lk = _dims(objects)
    parts = [_DS_MAGIC, struct.pack("<HIIII", _DS_VERSION, len(objects), T, R, Lk)]
    for obj in objects:
        tag = obj.scenario_tag.encode("utf-8")
        parts.append(struct.pack("<Id", obj.K, obj.sigma2))
        parts.append(struct.pack("<H", len(tag)) + tag)
        # row-major (K, R, T) with interleaved (re, im)
        parts.append(np.ascontiguousarray(obj.H).astype("<c16").tobytes())
    return _container.seal(b"".join(parts))


def loads_dataset(blob: bytes) -> list:
    payload = _container.unseal(blob, _DS_MAGIC, _DS_VERSION)
    rd = _container.Reader(payload, len(_DS_MAGIC) + 2)
    N, T, R, Lk = rd.unpack("IIII")
    objects = []
    for _ in range(N):
        K, sigma2 = rd.unpack("Id")
        tag = rd.take(rd.unpack("H")).decode("utf-8")
        raw = rd.take(16 * K * R * T)
        H = np.frombuffer(raw, dtype="<c16").reshape(K, R, T).astype(np.complex128)
        objects.append(ChannelObject(H, sigma2, tag, Lk))
    if not rd.at_end():
        raise ContainerError("trailing bytes after last record")
    return objects


def save_dataset(objects, path) -> None:
    _container.write_bytes(path, dumps_dataset(objects))


def load_dataset(path) -> list:
    return loads_dataset(_container.read_bytes(path))
