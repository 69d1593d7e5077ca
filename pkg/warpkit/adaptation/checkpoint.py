from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import StorageError
from ..numerics import Tensor, load_tensor_dir, save_tensor_dir
from .lora import AdapterTarget, LoraAdapter, SubjectToken


def save_adapters(
    directory: str | Path,
    adapters: Sequence[LoraAdapter],
    token: SubjectToken,
    *,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """Write adapter factors and the subject embedding with a YAML manifest."""
    tensors: dict[str, Tensor] = {"subject.embedding": token.embedding}
    entries = []
    for adapter in adapters:
        tensors[f"{adapter.name}.down"] = adapter.down
        tensors[f"{adapter.name}.up"] = adapter.up
        entries.append(
            {"layer": adapter.layer, "target": adapter.target.value, "rank": adapter.rank, "scale": adapter.scale}
        )
    manifest = {"adapters": entries, "token_id": token.token_id}
    manifest.update(extra or {})
    return save_tensor_dir(directory, tensors, kind="adapters", extra=manifest)


def load_adapters(directory: str | Path) -> tuple[list[LoraAdapter], SubjectToken, dict[str, Any]]:
    tensors, manifest = load_tensor_dir(directory, kind="adapters")
    try:
        adapters = []
        for entry in manifest["adapters"]:
            name = f"lora.{entry['layer']}.{entry['target']}"
            adapters.append(
                LoraAdapter(
                    layer=int(entry["layer"]),
                    target=AdapterTarget.parse(entry["target"]),
                    down=Tensor.leaf(tensors[f"{name}.down"]),
                    up=Tensor.leaf(tensors[f"{name}.up"]),
                    scale=float(entry["scale"]),
                )
            )
        token = SubjectToken(embedding=Tensor.leaf(tensors["subject.embedding"]), token_id=int(manifest["token_id"]))
    except KeyError as ex:
        raise StorageError(f"Adapter checkpoint {directory} is missing {ex}") from None
    return adapters, token, manifest
