from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from ..correspondence.flow import FlowField
from ..errors import InputError, StorageError
from ..numerics import Tensor, encode_tensor, read_tensor

logger = logging.getLogger(__name__)

FLOW_HEADER = ("frame", "row", "col", "drow", "dcol")


def _prepare(path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise StorageError(f"Cannot create {path.parent}: {ex}") from None
    return path


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = _prepare(Path(path))
    try:
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as ex:
        raise StorageError(f"Failed to write {path}: {ex}") from None
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as ex:
        raise StorageError(f"Cannot read {path}: {ex}") from None


def write_flow_csv(path: str | Path, flows: Mapping[int, FlowField] | FlowField) -> Path:
    """``frame,row,col,drow,dcol`` rows; a mapping adds a leading ``step`` column."""
    if isinstance(flows, FlowField):
        return write_csv(path, FLOW_HEADER, flows.rows())
    rows = ((step, *row) for step, flow in sorted(flows.items()) for row in flow.rows())
    return write_csv(path, ("step", *FLOW_HEADER), rows)


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> Path:
    path = _prepare(Path(path))
    try:
        with path.open("w") as handle:
            for record in records:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as ex:
        raise StorageError(f"Failed to write {path}: {ex}") from None
    return path


def latent_hash(latent: Tensor | np.ndarray) -> str:
    return hashlib.sha256(encode_tensor(latent)).hexdigest()


def write_frames(latent: Tensor | np.ndarray, directory: str | Path, prefix: str = "frame") -> list[Path]:
    """One binary PPM per frame for eyeballing; never read back.

    The first three latent channels become RGB (fewer channels are repeated),
    min-max mapped to 0-255 over the whole clip.
    """
    data = np.asarray(latent.data if isinstance(latent, Tensor) else latent, dtype=np.float64)
    if data.ndim != 4:
        raise StorageError(f"Frame dumps need a [F, H, W, C] latent, got shape {data.shape}")
    rgb = data[..., :3]
    if rgb.shape[-1] < 3:
        rgb = np.concatenate([rgb] * 3, axis=-1)[..., :3]
    lo, hi = float(rgb.min()), float(rgb.max())
    span = hi - lo if hi > lo else 1.0
    pixels = np.round((rgb - lo) / span * 255.0).astype(np.uint8)

    directory = Path(directory)
    paths = []
    for index, frame in enumerate(pixels):
        path = _prepare(directory / f"{prefix}_{index:02d}.ppm")
        try:
            Image.fromarray(np.ascontiguousarray(frame)).save(path, format="PPM")
        except OSError as ex:
            raise StorageError(f"Failed to write frame {path}: {ex}") from None
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} frames to {directory}")
    return paths


def read_reference(
    path: str | Path,
    frame_shape: tuple[int, int, int],
    dtype: np.dtype | str | None = None,
) -> Tensor:
    """A single-frame reference latent of ``frame_shape`` (H, W, C) from disk.

    ``.wkt`` files are read as stored. Anything else is opened with Pillow as
    RGB, resized to H x W if needed and mapped from 0-255 to [-1, 1]; the RGB
    channels repeat cyclically to fill C.
    """
    path = Path(path)
    if path.suffix == ".wkt":
        stored = read_tensor(path)
        if stored.ndim == 3:
            stored = stored[None]
        if stored.shape != (1, *frame_shape):
            raise InputError(f"Reference latent {path} has shape {stored.shape}, expected one frame of {frame_shape}")
        return Tensor(stored, dtype=dtype)
    height, width, channels = frame_shape
    try:
        with Image.open(path) as image:
            rgb = image.convert("RGB")
            if rgb.size != (width, height):
                logger.info(f"Resizing reference {path} from {rgb.size} to {(width, height)}")
                rgb = rgb.resize((width, height), Image.Resampling.NEAREST)
            pixels = np.asarray(rgb, dtype=np.float64)
    except OSError as ex:
        raise StorageError(f"Cannot read reference image {path}: {ex}") from None
    data = pixels / 127.5 - 1.0
    return Tensor(data[None, ..., np.arange(channels) % 3], dtype=dtype)
