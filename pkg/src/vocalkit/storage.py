"""On-disk formats: .kspec matrices, JSON Lines records, checksummed manifests."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

KSPEC_MAGIC = b"KSPC"
KSPEC_VERSION = 1
MANIFEST_FORMAT_VERSION = 1


class StorageError(Exception):
    pass


class ChecksumError(StorageError):
    pass


class UnsupportedVersionError(StorageError):
    pass


def write_kspec(path: Path | str, matrix: np.ndarray) -> None:
    """Write a 2-D float matrix: magic "KSPC", u8 version, u32 rows, u32 cols,
    then rows*cols little-endian IEEE-754 float32, row-major."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise StorageError(f"kspec stores 2-D matrices, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(KSPEC_MAGIC)
        fh.write(struct.pack("<BII", KSPEC_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_kspec(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != KSPEC_MAGIC:
            raise StorageError(f"{path}: bad magic {magic!r}")
        version, rows, cols = struct.unpack("<BII", fh.read(9))
        if version != KSPEC_VERSION:
            raise UnsupportedVersionError(f"{path}: kspec version {version} unsupported")
        payload = fh.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise StorageError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path: Path | str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: Path | str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path: Path | str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=False) + "\n")


def read_jsonl(path: Path | str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def build_checksums(base: Path, rel_paths: list[str]) -> dict[str, str]:
    return {rel: sha256_file(base / rel) for rel in sorted(rel_paths)}


def verify_checksums(base: Path, checksums: dict[str, str]) -> None:
    """Raise ChecksumError naming the first file whose bytes do not match."""
    for rel in sorted(checksums):
        target = base / rel
        if not target.exists():
            raise ChecksumError(f"missing artefact file: {rel}")
        actual = sha256_file(target)
        if actual != checksums[rel]:
            raise ChecksumError(
                f"checksum mismatch for {rel}: expected {checksums[rel]}, got {actual}"
            )
