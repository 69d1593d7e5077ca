from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from ..errors import StorageError
from ..version import __version__
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"WKT1"
TENSOR_SUFFIX = ".wkt"
MANIFEST_NAME = "manifest.yaml"

_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_tensor(value: Tensor | np.ndarray) -> bytes:
    """Serialize to the WKT1 layout: magic, u32 rank, u32 dims, u8 dtype, payload."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    code = _CODES.get(array.dtype)
    if code is None:
        raise StorageError(f"Cannot store dtype {array.dtype}; only float32 and float64 tensors are supported.")
    header = MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape) + struct.pack("<B", code)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise StorageError(f"Not a WKT1 tensor file (magic {blob[:4]!r}).")
    try:
        (rank,) = struct.unpack_from("<I", blob, 4)
        dims = struct.unpack_from(f"<{rank}I", blob, 8)
        (code,) = struct.unpack_from("<B", blob, 8 + 4 * rank)
    except struct.error as ex:
        raise StorageError(f"Truncated tensor header: {ex}") from None
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise StorageError(f"Unknown tensor dtype code {code}.")
    offset = 9 + 4 * rank
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise StorageError(f"Tensor payload holds {len(blob) - offset} bytes, expected {expected} for shape {dims}.")
    array = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims)
    return array.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: str | Path, value: Tensor | np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_tensor(value))
    except OSError as ex:
        raise StorageError(f"Failed to write tensor file {path}: {ex}") from None
    return path


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as ex:
        raise StorageError(f"Failed to read tensor file {path}: {ex}") from None
    try:
        return decode_tensor(blob)
    except StorageError as ex:
        raise StorageError(f"{path}: {ex}") from None


def save_tensor_dir(
    directory: str | Path,
    tensors: Mapping[str, Tensor | np.ndarray],
    *,
    kind: str,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """Write named tensors plus a YAML manifest echoing names, shapes and metadata."""
    directory = Path(directory)
    entries: dict[str, dict[str, Any]] = {}
    for name, value in tensors.items():
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        filename = f"{name}{TENSOR_SUFFIX}"
        write_tensor(directory / filename, array)
        entries[name] = {"file": filename, "shape": list(array.shape), "dtype": str(array.dtype)}
    manifest = {"kind": kind, "format": MAGIC.decode(), "version": __version__, "tensors": entries}
    if extra:
        manifest.update(extra)
    try:
        (directory / MANIFEST_NAME).write_text(yaml.safe_dump(manifest, sort_keys=True))
    except OSError as ex:
        raise StorageError(f"Failed to write manifest in {directory}: {ex}") from None
    logger.debug(f"Saved {len(entries)} tensors to {directory}")
    return directory


def load_tensor_dir(directory: str | Path, *, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = yaml.safe_load(manifest_path.read_text())
    except OSError as ex:
        raise StorageError(
            f"Cannot read {manifest_path}: {ex}\n"
            f"Expected a directory written by warpkit containing {MANIFEST_NAME}."
        ) from None
    except yaml.YAMLError as ex:
        raise StorageError(f"Malformed manifest {manifest_path}: {ex}") from None
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise StorageError(f"Manifest {manifest_path} lists no tensors.")
    if kind is not None and manifest.get("kind") != kind:
        raise StorageError(f"{directory} holds a {manifest.get('kind')!r} checkpoint, expected {kind!r}.")
    tensors: dict[str, np.ndarray] = {}
    for name, entry in manifest["tensors"].items():
        array = read_tensor(directory / entry["file"])
        if list(array.shape) != list(entry["shape"]):
            raise StorageError(f"Tensor {name} has shape {array.shape}, manifest says {entry['shape']}.")
        tensors[name] = array
    return tensors, manifest
