"""Multi-scale content features through a pluggable CNN inference backend.

A backend is a narrow contract: image in, tapped 512-channel feature map out
(spatial stride 32). Production backends load an exported TorchScript graph
plus its JSON sidecar manifest; tests and synthetic runs use a deterministic
stub that box-averages the input. Either way the feature math on top (scaling,
global average pooling, elementwise aggregation, normalization) is pure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

DEFAULT_BASE_SIDE = 512
DEFAULT_SCALE_FACTORS = (0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
TAP_STRIDE = 32
TAP_CHANNELS = 512

ROLE_FOREGROUND = "foreground"
ROLE_BACKGROUND = "background"
_ROLE_TO_KIND = {ROLE_FOREGROUND: "ff", ROLE_BACKGROUND: "bf"}

_MANIFEST_FORMAT = "ccfeat-backend/1"


class ContentError(ValueError):
    """Bad image data or feature-math misuse."""


class BackendError(RuntimeError):
    """Backend load or inference failure."""


@dataclass(frozen=True)
class Preprocessing:
    """Channel order and affine normalization a backend expects.

    Applied as ``((x * input_scale)[reordered] - mean) / std`` on H x W x 3
    float input in RGB order.
    """

    channel_order: str = "rgb"
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    input_scale: float = 1.0

    def apply(self, image: np.ndarray) -> np.ndarray:
        x = image.astype(np.float32) * self.input_scale
        if self.channel_order == "bgr":
            x = x[..., ::-1]
        elif self.channel_order != "rgb":
            raise BackendError(f"unknown channel order {self.channel_order!r}")
        return (x - np.asarray(self.mean, dtype=np.float32)) / np.asarray(self.std, dtype=np.float32)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    repeats: int = 1


@dataclass(frozen=True)
class PoolSpec:
    kernel: int = 2
    stride: int = 2
    padding: int = 0


#: the 13-conv / 5-pool backbone truncated at the 5th pooling layer
VGG16_POOL5_LAYERS: tuple = (
    ConvSpec(3, 64), ConvSpec(64, 64), PoolSpec(),
    ConvSpec(64, 128), ConvSpec(128, 128), PoolSpec(),
    ConvSpec(128, 256), ConvSpec(256, 256), ConvSpec(256, 256), PoolSpec(),
    ConvSpec(256, 512), ConvSpec(512, 512), ConvSpec(512, 512), PoolSpec(),
    ConvSpec(512, 512), ConvSpec(512, 512), ConvSpec(512, 512), PoolSpec(),
)


@dataclass(frozen=True)
class ScaleSet:
    """Resolutions at which content features are pooled."""

    factors: tuple[float, ...] = DEFAULT_SCALE_FACTORS
    base_side: int = DEFAULT_BASE_SIDE

    def __post_init__(self):
        if not self.factors:
            raise ValueError("ScaleSet requires at least one factor")
        if any(f <= 0 for f in self.factors):
            raise ValueError("scale factors must be positive")


@dataclass
class ContentFeature:
    image_id: str
    kind: str  # "ff" or "bf"
    vec: np.ndarray  # 512 floats, L2-normalized unless all-zero


class BackendModel:
    """Loaded inference backend: image in, tapped feature map out."""

    def __init__(self, role: str, preprocessing: Preprocessing,
                 layers: tuple | None = None, sha256: str = "",
                 stride: int = TAP_STRIDE, channels: int = TAP_CHANNELS):
        if role not in _ROLE_TO_KIND:
            raise BackendError(f"unknown backend role {role!r}")
        self.role = role
        self.preprocessing = preprocessing
        self.layers = layers
        self.sha256 = sha256
        self.stride = stride
        self.channels = channels

    @property
    def kind(self) -> str:
        return _ROLE_TO_KIND[self.role]

    def infer(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class StubBackend(BackendModel):
    """Deterministic test double: per-channel box averages at stride 32.

    Output channel c is the box mean of input channel ``c % 3``, so the map
    is content-dependent and bit-reproducible without any weights.
    """

    def infer(self, image: np.ndarray) -> np.ndarray:
        x = self.preprocessing.apply(_as_image_array(image))
        h, w = x.shape[:2]
        row_idx = np.arange(0, h, self.stride)
        col_idx = np.arange(0, w, self.stride)
        row_len = np.diff(np.append(row_idx, h)).astype(np.float32)
        col_len = np.diff(np.append(col_idx, w)).astype(np.float32)
        sums = np.add.reduceat(x, row_idx, axis=0)
        sums = np.add.reduceat(sums, col_idx, axis=1)
        means = sums / row_len[:, None, None] / col_len[None, :, None]
        return means[:, :, np.arange(self.channels) % 3].astype(np.float32)


class TorchscriptBackend(BackendModel):
    """Backend running an exported TorchScript graph (lazy torch import)."""

    def __init__(self, graph_path: Path, **kwargs):
        super().__init__(**kwargs)
        try:
            import torch
        except ImportError as e:
            raise BackendError("torch is required to run TorchScript backends") from e
        self._torch = torch
        try:
            self._module = torch.jit.load(str(graph_path), map_location="cpu")
        except Exception as e:
            raise BackendError(f"unreadable graph {graph_path}: {e}") from e
        self._module.eval()

    def infer(self, image: np.ndarray) -> np.ndarray:
        x = self.preprocessing.apply(_as_image_array(image))
        tensor = self._torch.from_numpy(np.ascontiguousarray(x)).permute(2, 0, 1).unsqueeze(0)
        with self._torch.no_grad():
            out = self._module(tensor)
        if out.ndim != 4 or out.shape[0] != 1:
            raise BackendError(f"tapped output has shape {tuple(out.shape)}, expected (1, C, h, w)")
        return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)


def _layers_to_json(layers) -> list:
    out = []
    for layer in layers:
        if isinstance(layer, ConvSpec):
            out.append({"type": "conv", "in": layer.in_channels, "out": layer.out_channels,
                        "kernel": layer.kernel, "stride": layer.stride,
                        "padding": layer.padding, "repeats": layer.repeats})
        else:
            out.append({"type": "pool", "kernel": layer.kernel, "stride": layer.stride,
                        "padding": layer.padding})
    return out


def _layers_from_json(items) -> tuple:
    layers = []
    for it in items:
        if it["type"] == "conv":
            layers.append(ConvSpec(it["in"], it["out"], it["kernel"], it["stride"],
                                   it["padding"], it.get("repeats", 1)))
        elif it["type"] == "pool":
            layers.append(PoolSpec(it["kernel"], it["stride"], it.get("padding", 0)))
        else:
            raise BackendError(f"unknown layer type {it['type']!r}")
    return tuple(layers)


def write_backend_manifest(path: str | Path, *, kind: str, role: str,
                           graph: str | None = None,
                           preprocessing: Preprocessing = Preprocessing(),
                           layers=VGG16_POOL5_LAYERS,
                           graph_sha256: str | None = None,
                           tapped: str = "pool5") -> Path:
    """Write the JSON sidecar manifest that makes a backend loadable."""
    doc = {
        "format": _MANIFEST_FORMAT,
        "kind": kind,
        "role": role,
        "tapped": tapped,
        "stride": TAP_STRIDE,
        "channels": TAP_CHANNELS,
        "channel_order": preprocessing.channel_order,
        "mean": list(preprocessing.mean),
        "std": list(preprocessing.std),
        "input_scale": preprocessing.input_scale,
        "layers": _layers_to_json(layers) if layers is not None else None,
    }
    if graph is not None:
        doc["graph"] = graph
    if graph_sha256 is not None:
        doc["graph_sha256"] = graph_sha256
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve_manifest(path: Path) -> Path:
    if path.suffix == ".json":
        return path
    sidecar = path.with_name(path.name + ".json")
    return sidecar


def load_backend(model_path: str | Path, role: str) -> BackendModel:
    """Load a backend from its manifest (or graph-with-sidecar) path.

    Validates the declared role and probes a 64 x 64 zero image, which must
    produce a 2 x 2 x 512 tapped map.
    """
    path = Path(model_path)
    manifest_path = _resolve_manifest(path)
    if not manifest_path.exists():
        raise BackendError(f"missing backend metadata {manifest_path}")
    try:
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise BackendError(f"unreadable backend metadata {manifest_path}: {e}") from e
    if meta.get("format") != _MANIFEST_FORMAT:
        raise BackendError(f"{manifest_path}: not a backend manifest")
    declared_role = meta.get("role")
    if declared_role != role:
        raise BackendError(f"{manifest_path}: role is {declared_role!r}, requested {role!r}")
    for key in ("channel_order", "mean", "std", "input_scale"):
        if key not in meta:
            raise BackendError(f"{manifest_path}: missing preprocessing metadata {key!r}")
    prep = Preprocessing(channel_order=meta["channel_order"], mean=tuple(meta["mean"]),
                         std=tuple(meta["std"]), input_scale=float(meta["input_scale"]))
    layers = _layers_from_json(meta["layers"]) if meta.get("layers") else None
    sha = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
    declared = {"stride": int(meta.get("stride", TAP_STRIDE)),
                "channels": int(meta.get("channels", TAP_CHANNELS))}
    kind = meta.get("kind")
    if kind == "stub":
        backend: BackendModel = StubBackend(role=role, preprocessing=prep, layers=layers,
                                            sha256=sha, **declared)
    elif kind == "torchscript":
        graph_name = meta.get("graph")
        if not graph_name:
            raise BackendError(f"{manifest_path}: torchscript manifest without a graph entry")
        backend = TorchscriptBackend(manifest_path.parent / graph_name, role=role,
                                     preprocessing=prep, layers=layers, sha256=sha, **declared)
    else:
        raise BackendError(f"{manifest_path}: unknown backend kind {kind!r}")

    probe = backend.infer(np.zeros((64, 64, 3), dtype=np.float32))
    if probe.shape != (2, 2, TAP_CHANNELS):
        raise BackendError(
            f"{manifest_path}: probe output has shape {probe.shape}, expected (2, 2, {TAP_CHANNELS})")
    return backend


def make_stub_manifest(path: str | Path, role: str,
                       preprocessing: Preprocessing = Preprocessing()) -> Path:
    """Convenience writer for a loadable stub-backend manifest."""
    return write_backend_manifest(path, kind="stub", role=role, preprocessing=preprocessing)


# --- image and feature math ---------------------------------------------------

def _as_image_array(raw) -> np.ndarray:
    arr = np.asarray(raw)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContentError(f"expected an H x W x 3 image, got shape {arr.shape}")
    return arr.astype(np.float32)


def preprocess_image(raw_image, base_side: int = DEFAULT_BASE_SIDE) -> np.ndarray:
    """Decode if needed and bilinear-resize to the square base resolution.

    Accepts a file path or an array. Channel reordering and mean subtraction
    happen inside the backend at inference time, not here. An input already
    at the base size passes through bitwise-identical.
    """
    if isinstance(raw_image, (str, Path)):
        try:
            with Image.open(raw_image) as im:
                arr = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError, ValueError) as e:
            raise ContentError(f"cannot decode image {raw_image}: {e}") from e
    else:
        arr = raw_image
    img = _as_image_array(arr)
    if img.shape[0] == base_side and img.shape[1] == base_side:
        return img
    return cv2.resize(img, (base_side, base_side), interpolation=cv2.INTER_LINEAR)


def scale_image(base: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear rescale of a square base image to side floor(side * factor).

    The floor matches the sides the pipeline advertises for the default
    factors (307, 409, 512, 614, 716, 819 from a 512 base).
    """
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    img = _as_image_array(base)
    side = int(img.shape[0] * factor)
    if side < 1:
        raise ValueError(f"scale factor {factor} collapses the image")
    if side == img.shape[0] and img.shape[0] == img.shape[1]:
        return img
    return cv2.resize(img, (side, side), interpolation=cv2.INTER_LINEAR)


def gap(feature_map: np.ndarray) -> np.ndarray:
    """Global average pooling: spatial mean per channel."""
    fmap = np.asarray(feature_map)
    if fmap.ndim != 3:
        raise ContentError(f"gap expects h x w x c, got shape {fmap.shape}")
    return fmap.mean(axis=(0, 1))


def normalize_feature(v: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """L2 normalization with an epsilon guard in the denominator."""
    v = np.asarray(v, dtype=np.float64)
    return v / (np.linalg.norm(v) + eps)


_AGGREGATORS = {
    "max": lambda vecs: np.max(vecs, axis=0),
    "mean": lambda vecs: np.mean(vecs, axis=0),
    "min": lambda vecs: np.min(vecs, axis=0),
}


def multiscale_features(image: np.ndarray, backend: BackendModel,
                        scales: ScaleSet = ScaleSet(), agg: str = "max",
                        image_id: str = "") -> ContentFeature:
    """Aggregate per-scale GAP vectors elementwise and L2-normalize.

    The per-scale vector is gap(backend(scale_image(base, factor))); the
    result kind follows the backend role (foreground -> ff, background -> bf).
    """
    if agg not in _AGGREGATORS:
        raise ValueError(f"unknown aggregation {agg!r}; expected one of {sorted(_AGGREGATORS)}")
    base = _as_image_array(image)
    vecs = []
    for factor in scales.factors:
        try:
            fmap = backend.infer(scale_image(base, factor))
        except BackendError:
            raise
        except Exception as e:
            raise BackendError(f"inference failed at scale {factor}: {e}") from e
        vecs.append(gap(fmap))
    pooled = _AGGREGATORS[agg](np.stack(vecs))
    return ContentFeature(image_id=image_id, kind=backend.kind,
                          vec=normalize_feature(pooled))


def estimate_flops(backend_or_layers, input_side: int) -> int:
    """Convolution FLOPs at a given square input side.

    Counts, per conv layer, the product of output spatial width and height,
    previous and current depth, kernel width and height, and repeats; output
    shapes are walked layer by layer from the given side. One count per
    multiply-accumulate term.
    """
    layers = getattr(backend_or_layers, "layers", backend_or_layers)
    if layers is None:
        raise BackendError("backend carries no layer metadata; shapes cannot be inferred")
    if input_side < 1:
        raise ValueError("input_side must be positive")
    side = int(input_side)
    total = 0
    for layer in layers:
        out_side = (side + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if out_side < 1:
            raise ContentError(f"input side {input_side} vanishes before the tapped layer")
        if isinstance(layer, ConvSpec):
            total += (out_side * out_side * layer.in_channels * layer.out_channels
                      * layer.kernel * layer.kernel * layer.repeats)
        side = out_side
    return total
