"""SEML model container: magic, version, family tag, JSON metadata, raw
little-endian float64 arrays, trailing CRC-32."""

import json
import struct

import numpy as np

from .. import _container
from .gbdt import GbdtModel
from .linear import LinearModel
from .mlp import MlpModel

_MAGIC = b"SEML"
_VERSION = 1
FAMILIES = {"linear": (1, LinearModel), "gbdt": (2, GbdtModel), "mlp": (3, MlpModel)}
_BY_TAG = {tag: (name, cls) for name, (tag, cls) in FAMILIES.items()}


def dumps_model(model) -> bytes:
    tag, _ = FAMILIES[model.family]
    meta, arrays = model._state()
    manifest = [[name, list(np.shape(a))] for name, a in arrays.items()]
    header = json.dumps({"meta": meta, "arrays": manifest}, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<HBI", _VERSION, tag, len(header)), header]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values()]
    return _container.seal(b"".join(parts))


def loads_model(blob: bytes, family: str = None):
    payload = _container.unseal(blob, _MAGIC, _VERSION)
    rd = _container.Reader(payload, len(_MAGIC) + 2)
    tag, size = rd.unpack("BI")
    if tag not in _BY_TAG:
        raise _container.ContainerError(f"unknown model family tag {tag}")
    name, cls = _BY_TAG[tag]
    if family is not None and family != name:
        raise TypeError(f"file holds a {name} model, expected {family}")
    header = json.loads(rd.take(size).decode("utf-8"))
    arrays = {}
    for key, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[key] = np.frombuffer(rd.take(8 * count), dtype="<f8").reshape(shape).astype(float)
    if not rd.at_end():
        raise _container.ContainerError("trailing bytes after model payload")
    return cls._from_state(header["meta"], arrays)


def save_model(model, path) -> None:
    _container.write_bytes(path, dumps_model(model))


def load_model(path, family: str = None):
    """Load any model; pass ``family`` to require a specific model type."""
    return loads_model(_container.read_bytes(path), family)
