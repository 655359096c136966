"""Convert VGG16 backbones into the backend interchange format.

The converter truncates a torchvision VGG16 at a pooling layer (the 5th for
the production contract), traces it to a TorchScript graph, writes the JSON
sidecar manifest the feature pipeline loads, and verifies two things before
declaring success: the tapped-layer probe contract (2 x 2 x 512 from a 64 x 64
zero image) and activation parity between the exported graph and the source
eager model on three fixed probe images.

Weight sources:
  - ``torchvision``       the ImageNet-trained weights (downloads on first use)
  - ``file:<path>``       a state dict on disk, e.g. scene-trained (Places365)
                          weights converted to torchvision layout
  - ``random:<seed>``     seeded random initialization, for tests and dev
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision.models import vgg16

from ccfeat.content import (VGG16_POOL5_LAYERS, Preprocessing, load_backend,
                            write_backend_manifest)

#: feature-module slice end per pooling layer of the torchvision VGG16
TAP_SLICES = {"pool1": 5, "pool2": 10, "pool3": 17, "pool4": 24, "pool5": 31}

PREPROCESSING = {
    "torchvision": Preprocessing(channel_order="rgb",
                                 mean=(0.485, 0.456, 0.406),
                                 std=(0.229, 0.224, 0.225),
                                 input_scale=1.0 / 255.0),
    # caffe-converted checkpoints expect BGR with per-channel mean subtraction
    "caffe": Preprocessing(channel_order="bgr",
                           mean=(103.939, 116.779, 123.68),
                           std=(1.0, 1.0, 1.0),
                           input_scale=1.0),
}

PROBE_SIDES = (64, 96, 128)
DEFAULT_TOLERANCE = 1e-4


class ExportError(RuntimeError):
    pass


@dataclass
class ExportManifest:
    """Record of one export: source, tap point, hashes, and the parity result."""

    role: str
    weights_source: str
    tapped: str
    graph: str
    graph_sha256: str
    preprocessing: str
    probe_shape: list[int]
    parity_max_abs: float

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


def load_source_model(weights_source: str) -> nn.Module:
    """Full VGG16 with the requested weights, eval mode."""
    if weights_source == "torchvision":
        from torchvision.models import VGG16_Weights
        try:
            model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        except Exception as e:
            raise ExportError(f"cannot obtain torchvision weights: {e}") from e
    elif weights_source.startswith("file:"):
        path = Path(weights_source[len("file:"):])
        if not path.exists():
            raise ExportError(f"weights file not found: {path}")
        model = vgg16(weights=None)
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        state = {k.removeprefix("module."): v for k, v in state.items()}
        feature_keys = {k for k in model.state_dict() if k.startswith("features.")}
        missing = feature_keys - set(state)
        if missing:
            raise ExportError(f"{path}: state dict is missing feature weights "
                              f"(e.g. {sorted(missing)[0]})")
        model.load_state_dict(state, strict=False)
    elif weights_source.startswith("random:"):
        try:
            seed = int(weights_source[len("random:"):])
        except ValueError:
            raise ExportError(f"bad random seed in {weights_source!r}") from None
        torch.manual_seed(seed)
        model = vgg16(weights=None)
    else:
        raise ExportError(f"unknown weights source {weights_source!r}")
    return model.eval()


def truncate_at(model: nn.Module, tap: str) -> nn.Module:
    if tap not in TAP_SLICES:
        raise ExportError(f"unknown tapped tensor {tap!r}; expected one of {sorted(TAP_SLICES)}")
    return nn.Sequential(*list(model.features.children())[:TAP_SLICES[tap]]).eval()


def probe_images() -> list[np.ndarray]:
    """Three fixed pseudo-random RGB probes at different sizes."""
    rng = np.random.default_rng(2024)
    return [rng.uniform(0.0, 255.0, size=(side, side, 3)).astype(np.float32)
            for side in PROBE_SIDES]


def _eager_activations(backbone: nn.Module, prep: Preprocessing,
                       image: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(prep.apply(image)))
    x = x.permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        out = backbone(x)
    return out.squeeze(0).permute(1, 2, 0).numpy()


def export(role: str, weights_source: str, out_path: str | Path, *,
           tap: str = "pool5", preprocessing: str = "torchvision",
           tolerance: float = DEFAULT_TOLERANCE) -> ExportManifest:
    """Write the TorchScript graph + sidecar manifest and verify the contract.

    Fails if the tapped output is not 512-deep at stride 32, or if the
    reloaded graph disagrees with the source model beyond the tolerance on
    the fixed probe images.
    """
    if preprocessing not in PREPROCESSING:
        raise ExportError(f"unknown preprocessing {preprocessing!r}")
    out_path = Path(out_path)
    backbone = truncate_at(load_source_model(weights_source), tap)

    with torch.no_grad():
        shape = tuple(backbone(torch.zeros(1, 3, 64, 64)).shape)
    if shape != (1, 512, 2, 2):
        raise ExportError(f"tapped output is {shape}, expected (1, 512, 2, 2); "
                          f"wrong tap point {tap!r}?")

    graph = torch.jit.trace(backbone, torch.zeros(1, 3, 64, 64))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    graph.save(str(out_path))
    sha = hashlib.sha256(out_path.read_bytes()).hexdigest()

    prep = PREPROCESSING[preprocessing]
    manifest_path = write_backend_manifest(
        Path(str(out_path) + ".json"), kind="torchscript", role=role,
        graph=out_path.name, preprocessing=prep, layers=VGG16_POOL5_LAYERS,
        graph_sha256=sha, tapped=tap)

    # reload through the consumer's loader: enforces the 2x2x512 probe
    backend = load_backend(manifest_path, role)
    max_abs = 0.0
    for image in probe_images():
        got = backend.infer(image)
        want = _eager_activations(backbone, prep, image)
        max_abs = max(max_abs, float(np.max(np.abs(got - want))))
    if max_abs > tolerance:
        raise ExportError(f"parity check failed: max |diff| {max_abs:.2e} > {tolerance:.0e}")

    record = ExportManifest(role=role, weights_source=weights_source, tapped=tap,
                            graph=out_path.name, graph_sha256=sha,
                            preprocessing=preprocessing,
                            probe_shape=[2, 2, 512], parity_max_abs=max_abs)
    record.write(Path(str(out_path) + ".export.json"))
    return record
