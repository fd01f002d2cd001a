"""Single-file checkpoint container: JSON manifest plus raw tensor blobs.

Layout: magic ``CANC``, u32 version, u32 manifest length, the manifest as
UTF-8 JSON (keys sorted, so identical state always serializes to identical
bytes), then one flat tensor blob per entry of ``manifest["tensors"]`` in
order.  The manifest's ``model`` section carries enough structure to
rebuild the network without a random generator; training state (epoch,
optimizer velocity names, generator state) rides along in other sections.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .cross_attention import CanModel, FusionMode, SingleModel
from .errors import DataFormatError
from .neural_core import LayerParams, Tensor, read_tensor, write_tensor
from .neural_core.tensor import _read_exact

CHECKPOINT_MAGIC = b"CANC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    manifest = dict(manifest)
    manifest["tensors"] = [
        {"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()
    ]
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in tensors.values():
            write_tensor(fh, arr)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "checkpoint magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}")
        version, mlen = struct.unpack("<II", _read_exact(fh, 8, "checkpoint header"))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(
                f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )
        try:
            manifest = json.loads(_read_exact(fh, mlen, "checkpoint manifest"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"unreadable checkpoint manifest: {exc}") from exc
        tensors: dict[str, np.ndarray] = {}
        for entry in manifest.get("tensors", []):
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise DataFormatError(
                    f"tensor {entry['name']!r} has shape {list(arr.shape)}, "
                    f"manifest says {entry['shape']}"
                )
            tensors[entry["name"]] = arr
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"unexpected trailing bytes at offset {fh.tell() - 1}")
    return manifest, tensors


def _layer_entries(model) -> list[tuple[str, LayerParams]]:
    if isinstance(model, CanModel):
        entries = [(f"backbone_a.{i}", p) for i, p in enumerate(model.backbone_a)]
        entries += [(f"backbone_b.{i}", p) for i, p in enumerate(model.backbone_b)]
        entries += [
            ("transition_a", model.transition_a),
            ("transition_b", model.transition_b),
            ("classifier", model.classifier),
        ]
    else:
        entries = [(f"backbone.{i}", p) for i, p in enumerate(model.backbone)]
        entries.append(("classifier", model.classifier))
    return entries


def model_tensors(model) -> dict[str, np.ndarray]:
    """Named parameter arrays in a fixed order, aligned with parameters()."""
    out: dict[str, np.ndarray] = {}
    for name, layer in _layer_entries(model):
        out[f"{name}.weight"] = layer.weight.values
        out[f"{name}.bias"] = layer.bias.values
    return out


def model_section(model, label_names: list[str] | None = None) -> dict:
    if isinstance(model, CanModel):
        sec = {
            "type": "can",
            "widths_a": [p.out_channels for p in model.backbone_a],
            "widths_b": [p.out_channels for p in model.backbone_b],
            "kernel": model.backbone_a[0].kernel_size,
            "in_channels": model.backbone_a[0].in_channels,
            "fusion_mode": model.fusion_mode.value,
            "concat_all": model.concat_all,
            "dropout_rate": model.dropout_rate,
            "label_count": model.label_count,
        }
    else:
        sec = {
            "type": "single",
            "widths": [p.out_channels for p in model.backbone],
            "kernel": model.backbone[0].kernel_size,
            "in_channels": model.backbone[0].in_channels,
            "dropout_rate": model.dropout_rate,
            "label_count": model.label_count,
        }
    if label_names is not None:
        sec["label_names"] = list(label_names)
    return sec


def _rebuild_backbone(widths, in_channels, kernel, tensors, prefix) -> list[LayerParams]:
    layers = []
    c_prev = in_channels
    for i, w in enumerate(widths):
        weight = Tensor(tensors[f"{prefix}.{i}.weight"], requires_grad=True)
        bias = Tensor(tensors[f"{prefix}.{i}.bias"], requires_grad=True)
        if weight.shape != (w, c_prev, kernel, kernel):
            raise DataFormatError(
                f"{prefix}.{i}.weight has shape {weight.shape}, "
                f"expected {(w, c_prev, kernel, kernel)}"
            )
        layers.append(LayerParams(weight, bias, stride=1, padding=kernel // 2))
        c_prev = w
    return layers


def model_from_state(section: dict, tensors: dict[str, np.ndarray]):
    """Rebuild a model from its manifest section and parameter arrays."""
    try:
        kind = section["type"]
        kernel = int(section["kernel"])
        in_channels = int(section["in_channels"])
        if kind == "can":
            backbone_a = _rebuild_backbone(
                section["widths_a"], in_channels, kernel, tensors, "backbone_a"
            )
            backbone_b = _rebuild_backbone(
                section["widths_b"], in_channels, kernel, tensors, "backbone_b"
            )
            def _one_by_one(prefix):
                return LayerParams(
                    Tensor(tensors[f"{prefix}.weight"], requires_grad=True),
                    Tensor(tensors[f"{prefix}.bias"], requires_grad=True),
                )
            classifier = _one_by_one("classifier")
            return CanModel(
                backbone_a,
                backbone_b,
                _one_by_one("transition_a"),
                _one_by_one("transition_b"),
                classifier,
                fusion_mode=FusionMode(section["fusion_mode"]),
                dropout_rate=float(section["dropout_rate"]),
                concat_all=bool(section["concat_all"]),
            )
        if kind == "single":
            backbone = _rebuild_backbone(
                section["widths"], in_channels, kernel, tensors, "backbone"
            )
            classifier = LayerParams(
                Tensor(tensors["classifier.weight"], requires_grad=True),
                Tensor(tensors["classifier.bias"], requires_grad=True),
            )
            return SingleModel(backbone, classifier, dropout_rate=float(section["dropout_rate"]))
        raise DataFormatError(f"unknown model type {kind!r}")
    except KeyError as exc:
        raise DataFormatError(f"checkpoint is missing {exc.args[0]!r}") from exc


def save_model(path, model, label_names: list[str] | None = None, extra: dict | None = None) -> None:
    """Write a model-only checkpoint (no optimizer or generator state)."""
    manifest = {"model": model_section(model, label_names)}
    if extra:
        manifest.update(extra)
    save_checkpoint(path, manifest, model_tensors(model))


def load_model(path):
    """Read any checkpoint and rebuild the model inside it."""
    manifest, tensors = load_checkpoint(path)
    if "model" not in manifest:
        raise DataFormatError("checkpoint has no model section")
    return model_from_state(manifest["model"], tensors), manifest
