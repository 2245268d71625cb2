"""
Binary containers

Embedding container (version 1):
    magic b"CDDS", u16 version, u32 n_images, n_texts, n_v, n_t, d, n_pairs,
    image payload, text payload (float32 little-endian, row-major),
    pairs as u32 (image_id, text_id).

Tensor archive (version 2), used by checkpoints:
    magic b"CDDS", u16 version, u32 count, then per tensor
    u16 name length, utf-8 name, u8 ndim, u32 dims, float64 little-endian data.

A JSON sidecar (<path>.json) describes each embedding container for humans.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from cddsalign.core.errors import CorruptionError, FormatError
from cddsalign.data.batch import EmbeddingBatch

logger = logging.getLogger(__name__)

MAGIC = b"CDDS"
CONTAINER_VERSION = 1
ARCHIVE_VERSION = 2

_HEADER = struct.Struct("<4sH6I")
_ARCHIVE_HEADER = struct.Struct("<4sHI")

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_container(batch: EmbeddingBatch, path: PathLike,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a batch in single precision and its JSON sidecar.

    Args:
        batch: Batch to write (structure is checked, pairs may be empty)
        path: Destination file
        metadata: Extra fields for the sidecar (seed, generator params, ...)
    """
    batch.check_structure()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, CONTAINER_VERSION, batch.n_images, batch.n_texts,
                          batch.n_v, batch.n_t, batch.d, len(batch.pairs))
    pairs = np.asarray(batch.pairs, dtype="<u4").reshape(-1, 2)
    with open(path, "wb") as f:
        f.write(header)
        f.write(batch.images.astype("<f4").tobytes(order="C"))
        f.write(batch.texts.astype("<f4").tobytes(order="C"))
        f.write(pairs.tobytes(order="C"))

    manifest = batch.to_manifest()
    manifest["format"] = {"magic": MAGIC.decode(), "version": CONTAINER_VERSION}
    if metadata:
        manifest.update(metadata)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)

    logger.info(f"Wrote container {path} ({batch.n_images} images, {batch.n_texts} texts)")
    return path


def _check_magic(magic: bytes, version: int, expected: int, path: Path) -> None:
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != expected:
        raise FormatError(f"{path}: unsupported version {version} (expected {expected})")


def read_container(path: PathLike) -> EmbeddingBatch:
    """Read a container; values come back as float64 of the stored float32"""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        if raw[:4] and raw[:4] != MAGIC[:len(raw[:4])]:
            raise FormatError(f"{path}: bad magic {raw[:4]!r}")
        raise CorruptionError(f"{path}: file too short for header ({len(raw)} bytes)")
    magic, version, n_images, n_texts, n_v, n_t, d, n_pairs = _HEADER.unpack_from(raw, 0)
    _check_magic(magic, version, CONTAINER_VERSION, path)

    n_image_values = n_images * n_v * d
    n_text_values = n_texts * n_t * d
    expected = _HEADER.size + 4 * (n_image_values + n_text_values) + 8 * n_pairs
    if len(raw) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(raw)}")

    offset = _HEADER.size
    images = np.frombuffer(raw, dtype="<f4", count=n_image_values, offset=offset)
    offset += 4 * n_image_values
    texts = np.frombuffer(raw, dtype="<f4", count=n_text_values, offset=offset)
    offset += 4 * n_text_values
    pairs = np.frombuffer(raw, dtype="<u4", count=2 * n_pairs, offset=offset).reshape(-1, 2)

    if n_pairs == 0:
        logger.warning(f"Container {path} has an empty pair list")
    return EmbeddingBatch(
        images.astype(np.float64).reshape(n_images, n_v, d),
        texts.astype(np.float64).reshape(n_texts, n_t, d),
        [tuple(p) for p in pairs.tolist()],
    )


def write_tensor_archive(path: PathLike, tensors: Dict[str, np.ndarray]) -> Path:
    """Write named float64 arrays, in insertion order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_ARCHIVE_HEADER.pack(MAGIC, ARCHIVE_VERSION, len(tensors)))
        for name, values in tensors.items():
            values = np.asarray(values, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", values.ndim))
            f.write(struct.pack(f"<{values.ndim}I", *values.shape))
            f.write(values.astype("<f8").tobytes(order="C"))
    return path


def read_tensor_archive(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _ARCHIVE_HEADER.size:
        raise CorruptionError(f"{path}: file too short for header")
    magic, version, count = _ARCHIVE_HEADER.unpack_from(raw, 0)
    _check_magic(magic, version, ARCHIVE_VERSION, path)

    tensors: Dict[str, np.ndarray] = {}
    offset = _ARCHIVE_HEADER.size
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            n_values = int(np.prod(shape)) if ndim else 1
            if offset + 8 * n_values > len(raw):
                raise CorruptionError(f"{path}: tensor '{name}' is truncated")
            values = np.frombuffer(raw, dtype="<f8", count=n_values, offset=offset)
            offset += 8 * n_values
            tensors[name] = values.astype(np.float64).reshape(shape)
    except struct.error as e:
        raise CorruptionError(f"{path}: truncated archive ({e})") from e
    if offset != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors
