"""Shared helpers for the checksummed binary containers (datasets, models)."""

import struct
import zlib
from pathlib import Path


class ContainerError(ValueError):
    """Base class for unreadable container files."""


class VersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def seal(payload: bytes) -> bytes:
    """Append a little-endian CRC-32 of ``payload``."""
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(blob: bytes, magic: bytes, version: int) -> bytes:
    """Validate magic, version and checksum; return the payload without the CRC.

    The version field is a ``u16`` that directly follows the magic.
    """
    head = len(magic) + 2
    if len(blob) < head or blob[: len(magic)] != magic:
        raise ContainerError(f"not a {magic.decode()} file")
    (found,) = struct.unpack_from("<H", blob, len(magic))
    if found != version:
        raise VersionError(f"unsupported {magic.decode()} version {found} (expected {version})")
    if len(blob) < head + 4:
        raise ChecksumError("file truncated")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"CRC-32 mismatch in {magic.decode()} file")
    return payload


def read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)


class Reader:
    """Sequential little-endian reader over a bytes payload."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def unpack(self, fmt: str):
        try:
            values = struct.unpack_from("<" + fmt, self.data, self.pos)
        except struct.error as exc:
            raise ChecksumError("payload shorter than declared") from exc
        self.pos += struct.calcsize("<" + fmt)
        return values if len(values) > 1 else values[0]

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumError("payload shorter than declared")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def at_end(self) -> bool:
        return self.pos == len(self.data)
