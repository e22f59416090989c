"""File formats: weight manifest + blob, architecture configs, IDX
datasets, and search reports.

Blob layout: tensors in manifest order, row-major, 32-bit little-endian
IEEE-754. The manifest is JSON with magic "QCAPS-MANIFEST", version 1.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .capsnet import (CapsModel, LayerKind, LayerSpec, QuantConfig,
                      build_shallowcaps)
from .fixedpoint import RoundingScheme
from .search import SearchOutcome, SelectedConfig, Selection

MANIFEST_MAGIC = "QCAPS-MANIFEST"
MANIFEST_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class ManifestError(ValueError):
    """Manifest/blob pair is malformed or does not match the architecture."""


class IdxError(ValueError):
    """IDX dataset file is malformed."""


@dataclass(frozen=True)
class TensorRecord:
    name: str
    role: str                   # "weight" or "bias"
    layer: int
    shape: tuple[int, ...]
    offset: int
    length: int


@dataclass(frozen=True)
class WeightManifest:
    architecture: str
    tensors: tuple[TensorRecord, ...]

    def to_json(self) -> dict:
        return {
            "magic": MANIFEST_MAGIC,
            "version": MANIFEST_VERSION,
            "architecture": self.architecture,
            "tensors": [
                {"name": t.name, "role": t.role, "layer": t.layer,
                 "shape": list(t.shape), "offset": t.offset, "length": t.length}
                for t in self.tensors
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, blob_size: int | None = None) -> "WeightManifest":
        if not isinstance(doc, dict) or doc.get("magic") != MANIFEST_MAGIC:
            raise ManifestError(f"bad manifest magic: {doc.get('magic')!r}")
        if doc.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {doc.get('version')!r}")
        tensors = []
        for rec in doc.get("tensors", []):
            shape = tuple(int(v) for v in rec["shape"])
            t = TensorRecord(str(rec["name"]), str(rec["role"]), int(rec["layer"]),
                             shape, int(rec["offset"]), int(rec["length"]))
            if t.role not in ("weight", "bias"):
                raise ManifestError(f"tensor {t.name!r}: bad role {t.role!r}")
            if t.length != 4 * int(np.prod(shape)):
                raise ManifestError(f"tensor {t.name!r}: length {t.length} != "
                                    f"4 * prod{shape}")
            if t.offset < 0:
                raise ManifestError(f"tensor {t.name!r}: negative offset")
            tensors.append(t)
        names = [t.name for t in tensors]
        if len(set(names)) != len(names):
            raise ManifestError("duplicate tensor names in manifest")
        spans = sorted((t.offset, t.offset + t.length, t.name) for t in tensors)
        for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ManifestError(f"tensors {n0!r} and {n1!r} overlap in the blob")
        if blob_size is not None and spans and spans[-1][1] > blob_size:
            raise ManifestError(f"blob truncated: need {spans[-1][1]} bytes, "
                                f"have {blob_size}")
        return cls(str(doc.get("architecture", "custom")), tuple(tensors))


def _model_records(model: CapsModel) -> list[tuple[TensorRecord, np.ndarray]]:
    out = []
    offset = 0
    for idx in range(model.num_layers):
        for role, tensor in (("weight", model.weights[idx]),
                             ("bias", model.biases[idx])):
            if tensor is None:
                continue
            length = 4 * tensor.size
            rec = TensorRecord(f"layer{idx}.{role}", role, idx,
                               tensor.shape, offset, length)
            out.append((rec, tensor))
            offset += length
    return out


def save_model(model: CapsModel, manifest_path: str | Path,
               blob_path: str | Path, architecture: str | None = None) -> None:
    """Write manifest + blob; deterministic bytes for identical input."""
    records = _model_records(model)
    manifest = WeightManifest(architecture or model.name,
                              tuple(rec for rec, _ in records))
    blob = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes()
                    for _, t in records)
    Path(manifest_path).write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    Path(blob_path).write_bytes(blob)


def load_model(manifest_path: str | Path, blob_path: str | Path,
               arch: CapsModel | str | Path) -> CapsModel:
    """Load FP32 tensors into the architecture; `arch` is a skeleton
    model, a preset name, or a path to an architecture JSON."""
    try:
        doc = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    blob = Path(blob_path).read_bytes()
    manifest = WeightManifest.from_json(doc, blob_size=len(blob))

    skeleton = arch if isinstance(arch, CapsModel) else load_architecture(arch)
    expected = _model_records(skeleton)
    if len(manifest.tensors) != len(expected):
        raise ManifestError(f"manifest has {len(manifest.tensors)} tensors, "
                            f"architecture expects {len(expected)}")
    by_name = {rec.name: rec for rec in manifest.tensors}
    weights: list = [None] * skeleton.num_layers
    biases: list = [None] * skeleton.num_layers
    for exp_rec, _ in expected:
        rec = by_name.get(exp_rec.name)
        if rec is None:
            raise ManifestError(f"manifest is missing tensor {exp_rec.name!r}")
        if rec.shape != exp_rec.shape or rec.layer != exp_rec.layer \
                or rec.role != exp_rec.role:
            raise ManifestError(
                f"tensor {rec.name!r}: got shape {rec.shape} (layer {rec.layer}, "
                f"{rec.role}), architecture expects {exp_rec.shape} "
                f"(layer {exp_rec.layer}, {exp_rec.role})")
        data = np.frombuffer(blob, dtype="<f4", count=rec.length // 4,
                             offset=rec.offset).astype(np.float64)
        tensor = data.reshape(rec.shape)
        if rec.role == "weight":
            weights[rec.layer] = tensor
        else:
            biases[rec.layer] = tensor
    return skeleton.with_weights(weights, biases)


_PRESETS = {"shallowcaps"}


def load_architecture(source: str | Path) -> CapsModel:
    """Architecture from a preset name or a JSON document.

    The JSON either names a preset with its parameters, e.g.
    {"preset": "shallowcaps", "num_classes": 10, "input_shape": [1,28,28],
    "width_factor": 0.125}, or lists layers explicitly.
    """
    text = str(source)
    if text in _PRESETS:
        return build_shallowcaps()
    doc = json.loads(Path(source).read_text())
    if "preset" in doc:
        if doc["preset"] not in _PRESETS:
            raise ValueError(f"unknown architecture preset {doc['preset']!r}")
        return build_shallowcaps(
            num_classes=int(doc.get("num_classes", 10)),
            input_shape=tuple(doc.get("input_shape", (1, 28, 28))),
            width_factor=float(doc.get("width_factor", 1.0)),
            routing_iterations=int(doc.get("routing_iterations", 3)))
    layers = []
    for rec in doc["layers"]:
        layers.append(LayerSpec(
            kind=LayerKind(rec["kind"]),
            name=rec.get("name", ""),
            kernel=int(rec.get("kernel", 1)),
            stride=int(rec.get("stride", 1)),
            out_channels=int(rec.get("out_channels", 0)),
            caps_types=int(rec.get("caps_types", 0)),
            num_caps_out=int(rec.get("num_caps_out", 0)),
            d_out=int(rec.get("d_out", 0)),
            uses_dynamic_routing=bool(rec.get("uses_dynamic_routing", False)),
            routing_iterations=int(rec.get("routing_iterations", 3)),
            has_bias=bool(rec.get("has_bias", True)),
            sources=tuple(rec.get("sources", ())),
        ))
    return CapsModel(layers, tuple(doc["input_shape"]), int(doc["num_classes"]),
                     name=doc.get("name", "custom"))


def architecture_to_json(model: CapsModel) -> dict:
    """Explicit-layer JSON form (inverse of load_architecture)."""
    return {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": [
            {"kind": s.kind.value, "name": s.name, "kernel": s.kernel,
             "stride": s.stride, "out_channels": s.out_channels,
             "caps_types": s.caps_types, "num_caps_out": s.num_caps_out,
             "d_out": s.d_out, "uses_dynamic_routing": s.uses_dynamic_routing,
             "routing_iterations": s.routing_iterations, "has_bias": s.has_bias,
             "sources": list(s.sources)}
            for s in model.layers
        ],
    }


@dataclass(frozen=True)
class LabeledDataset:
    """Images in [0,1], shape [N, C, H, W]; integer class labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, n: int) -> "LabeledDataset":
        return LabeledDataset(self.images[:n], self.labels[:n])


def _read_be32(buf: bytes, offset: int, path: Path) -> int:
    if offset + 4 > len(buf):
        raise IdxError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """Read an IDX image/label pair; pixel bytes are scaled by 1/255."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    ibuf = images_path.read_bytes()
    magic = _read_be32(ibuf, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxError(f"{images_path}: bad magic 0x{magic:08x}, "
                       f"expected 0x{IDX_IMAGES_MAGIC:08x}")
    n = _read_be32(ibuf, 4, images_path)
    h = _read_be32(ibuf, 8, images_path)
    w = _read_be32(ibuf, 12, images_path)
    pixels = np.frombuffer(ibuf, dtype=np.uint8, offset=16)
    if pixels.size != n * h * w:
        raise IdxError(f"{images_path}: expected {n * h * w} pixel bytes, "
                       f"found {pixels.size}")

    lbuf = labels_path.read_bytes()
    magic = _read_be32(lbuf, 0, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxError(f"{labels_path}: bad magic 0x{magic:08x}, "
                       f"expected 0x{IDX_LABELS_MAGIC:08x}")
    n_labels = _read_be32(lbuf, 4, labels_path)
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=8)
    if labels.size != n_labels:
        raise IdxError(f"{labels_path}: expected {n_labels} labels, "
                       f"found {labels.size}")
    if n != n_labels:
        raise IdxError(f"count mismatch: {n} images vs {n_labels} labels")

    images = pixels.reshape(n, 1, h, w).astype(np.float64) / 255.0
    return LabeledDataset(images, labels.astype(np.int64))


def save_idx(images: np.ndarray, labels: np.ndarray,
             images_path: str | Path, labels_path: str | Path) -> None:
    """Write an IDX pair (uint8 images [N,H,W], uint8 labels)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    if labels.shape != (n,):
        raise ValueError(f"{n} images vs {labels.shape} labels")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())


def _config_entry(role: str, ev) -> dict:
    cfg: QuantConfig = ev.config
    m = ev.metrics
    return {
        "role": role,
        "scheme": cfg.scheme.value,
        "q_w": list(cfg.q_w),
        "q_a": list(cfg.q_a),
        "q_dr": {str(l): v for l, v in cfg.q_dr},
        "accuracy": m.accuracy,
        "weight_memory_bits": m.weight_memory_bits,
        "activation_memory_bits": m.activation_memory_bits,
        "weight_reduction": m.weight_reduction,
        "activation_reduction": m.activation_reduction,
    }


def _selection_entry(pick: SelectedConfig | None) -> dict | None:
    if pick is None:
        return None
    entry = _config_entry(pick.role, pick.result)
    entry["scheme"] = pick.scheme.value
    return entry


def report_document(outcomes: Sequence[SearchOutcome],
                    selection: Selection | None) -> dict:
    schemes = []
    for o in outcomes:
        configs = []
        if o.model_satisfied is not None:
            configs.append(_config_entry("satisfied", o.model_satisfied))
        if o.path == "B" and o.model_memory is not None:
            configs.append(_config_entry("memory", o.model_memory))
        if o.model_accuracy is not None:
            configs.append(_config_entry("accuracy", o.model_accuracy))
        schemes.append({
            "scheme": o.scheme.value,
            "path": o.path,
            "acc_fp32": o.acc_fp32,
            "acc_target": o.acc_target,
            "acc_mm": o.acc_mm,
            "configs": configs,
            "notes": list(o.notes),
            "error": o.error,
        })
    doc = {"schemes": schemes}
    if selection is not None:
        doc["selection"] = {
            "path": selection.path,
            "satisfied": _selection_entry(selection.satisfied),
            "memory": _selection_entry(selection.memory_pick),
            "accuracy": _selection_entry(selection.accuracy_pick),
        }
    return doc


CSV_FIELDS = ["scheme", "path", "role", "accuracy", "weight_memory_bits",
              "activation_memory_bits", "weight_reduction",
              "activation_reduction"]


def write_report(outcomes: Sequence[SearchOutcome], selection: Selection | None,
                 path: str | Path) -> tuple[Path, Path]:
    """JSON report at `path` plus a per-config CSV alongside it."""
    if not outcomes:
        raise ValueError("no outcomes to report")
    path = Path(path)
    doc = report_document(outcomes, selection)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for scheme_doc in doc["schemes"]:
            for entry in scheme_doc["configs"]:
                row = dict(entry)
                row["path"] = scheme_doc["path"]
                writer.writerow(row)
    return path, csv_path


def load_quant_config(path: str | Path) -> QuantConfig:
    """Per-layer config file for direct quantized evaluation."""
    doc = json.loads(Path(path).read_text())
    return QuantConfig(
        scheme=RoundingScheme.parse(doc["scheme"]),
        q_w=tuple(doc["q_w"]),
        q_a=tuple(doc["q_a"]),
        q_dr=tuple((int(k), int(v)) for k, v in doc.get("q_dr", {}).items()),
    )
