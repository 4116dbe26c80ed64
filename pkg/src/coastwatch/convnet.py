"""Conversion of the trained regressor into a fully-convolutional network.

The deployed network reproduces the regression pipeline as convolutions: a
fixed front layer averages each band over non-overlapping 10x10 windows
(depthwise, kernel weight 1/100, untrainable), and every fully-connected
layer becomes a 1x1 convolution over the resulting 25x25 grid. The
conversion is exact in eval mode:

* batch-norm is folded into the preceding layer's kernel and bias
  (w' = w * gamma / sqrt(var + eps), b' = (b - mean) * gamma /
  sqrt(var + eps) + beta);
* the feature standardization is absorbed into the first 1x1 layer and the
  target de-standardization into the last, so the network consumes raw
  reflectance patches and emits physical units;
* dropout disappears (eval semantics).

For every patch P and window w the identity ConvNet(P)[w] =
FC(mean_10x10(P, w)) holds up to float rounding; ``verify_equivalence``
certifies it against the independent FC route and the CNN1 file records the
report hash of the run that blessed a deployed model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import NormStats
from .errors import DimensionError, FormatError, NumericError, TransferError
from .mlp import BN_EPS, MLPParams, forward
from .raster import WINDOW, BandStack, GeoRef, Patch, window_average


@dataclass
class ConvLayer:
    kernel: np.ndarray   # (out_channels, in_channels), a 1x1 convolution
    bias: np.ndarray     # (out_channels,)
    relu: bool


@dataclass
class ConvNet:
    """The transferred network: fixed averaging front end + 1x1 conv stack.

    ``layers`` excludes the front averaging layer, which is structural:
    depthwise, kernel ``window x window``, stride ``window``, every weight
    exactly ``1 / window**2``, bias 0, untrainable. No layer after it
    changes the spatial dimensions.
    """

    channels: tuple[int, ...]
    layers: list[ConvLayer]
    window: int = WINDOW
    dtype: str = "f32"
    parameter: str = "unknown"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) != len(self.channels) - 1:
            raise TransferError("one 1x1 layer per channel transition required")
        for k, layer in enumerate(self.layers):
            expect = (self.channels[k + 1], self.channels[k])
            if layer.kernel.shape != expect:
                raise TransferError(
                    f"layer {k + 1}: kernel {layer.kernel.shape}, expected {expect}"
                )
            if layer.bias.shape != (self.channels[k + 1],):
                raise TransferError(f"layer {k + 1}: bias shape mismatch")
        if self.dtype not in ("f32", "f16"):
            raise ValueError(f"unknown dtype {self.dtype!r}")

    @property
    def n_layers(self) -> int:
        """Total layer count including the fixed averaging front layer."""
        return len(self.layers) + 1

    @property
    def front_weight(self) -> float:
        return 1.0 / self.window**2

    def parameter_count(self) -> int:
        return sum(l.kernel.size + l.bias.size for l in self.layers)


@dataclass
class ContaminantMap:
    """Dense 25x25 prediction grid for one patch, in physical units."""

    values: np.ndarray
    parameter: str
    georef: GeoRef
    window_gsd: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (25, 25):
            raise DimensionError(
                f"contaminant map must be 25x25, got {self.values.shape}"
            )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """Lat/lon of the center of window (row, col)."""
        half_cells = self.values.shape[0] / 2.0
        north_m = (half_cells - (row + 0.5)) * self.window_gsd
        east_m = ((col + 0.5) - half_cells) * self.window_gsd
        return self.georef.offset_latlon(north_m, east_m)


def fc_to_cnn(params: MLPParams, stats: NormStats, parameter: str) -> ConvNet:
    """Transplant the trained regressor into the convolutional form.

    Requires populated batch-norm running statistics (eval mode is what the
    conversion reproduces). All folding algebra runs in float64; kernels are
    emitted as float32.
    """
    if not params.bn_stats_tracked:
        raise TransferError(
            "batch-norm running statistics never updated; train or load a "
            "model before transfer"
        )
    layers: list[ConvLayer] = []
    for k in range(params.n_hidden):
        w = params.weights[k].astype(np.float64)
        b = params.biases[k].astype(np.float64)
        if k == 0:
            # absorb feature standardization: x_norm = (f - mu_f) / sigma_f
            w = w / stats.feature_std[None, :]
            b = b - w @ stats.feature_mean
        scale = params.bn_gamma[k] / np.sqrt(params.bn_var[k] + BN_EPS)
        kernel = w * scale[:, None]
        bias = (b - params.bn_mean[k]) * scale + params.bn_beta[k]
        layers.append(ConvLayer(kernel.astype(np.float32),
                                bias.astype(np.float32), relu=True))
    # output layer: no batch-norm, no activation; absorb target
    # de-standardization so the map is in physical units
    w_out = params.weights[-1].astype(np.float64) * stats.target_std
    b_out = params.biases[-1].astype(np.float64) * stats.target_std
    b_out = b_out + stats.target_mean
    layers.append(ConvLayer(w_out.astype(np.float32),
                            b_out.astype(np.float32), relu=False))
    return ConvNet(
        channels=tuple(params.layer_dims),
        layers=layers,
        parameter=parameter,
        meta={"normalization_absorbed": True, "output_units": "physical"},
    )


def _run_stack(net: ConvNet, grid: np.ndarray) -> np.ndarray:
    """Apply the 1x1 stack to a (channels, cells) activation matrix.

    Parameters stay in the deployed dtype (f32, or f16 values re-expanded to
    f32); the arithmetic runs in float64 so deviations against the reference
    regressor measure parameter rounding, not accumulator noise.
    """
    act = grid.astype(np.float64)
    for k, layer in enumerate(net.layers):
        act = layer.kernel.astype(np.float64) @ act + layer.bias.astype(
            np.float64
        )[:, None]
        if not np.isfinite(act).all():
            raise NumericError(f"non-finite activations at conv layer {k + 1}")
        if layer.relu:
            np.maximum(act, 0.0, out=act)
    return act


def infer_raster(net: ConvNet, raster: BandStack) -> np.ndarray:
    """Forward a 7-band raster; returns the (rows, cols) prediction grid."""
    if raster.bands != net.channels[0]:
        raise DimensionError(
            f"raster has {raster.bands} bands, network expects {net.channels[0]}"
        )
    avg = window_average(raster, net.window)
    grid = avg.data.reshape(raster.bands, -1)
    out = _run_stack(net, grid)
    return out.reshape(avg.height, avg.width)


def infer_patch(net: ConvNet, patch: Patch) -> ContaminantMap:
    """One forward pass over a 256x256x7 patch; 25x25 map, deterministic."""
    values = infer_raster(net, patch.raster)
    return ContaminantMap(
        values=values,
        parameter=net.parameter,
        georef=patch.georef,
        window_gsd=patch.georef.gsd * net.window,
    )


@dataclass
class EquivalenceReport:
    max_abs_deviation: float
    mean_abs_deviation: float
    n_patches: int
    n_cells: int
    tol: float
    passed: bool
    vacuous: bool
    worst: tuple[int, int, int]   # (patch index, cell row, cell col)

    def to_json(self) -> dict:
        return {
            "max_abs_deviation": self.max_abs_deviation,
            "mean_abs_deviation": self.mean_abs_deviation,
            "n_patches": self.n_patches,
            "n_cells": self.n_cells,
            "tol": self.tol,
            "passed": self.passed,
            "vacuous": self.vacuous,
            "worst": list(self.worst),
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()
        ).hexdigest()


def verify_equivalence(
    params: MLPParams,
    stats: NormStats,
    net: ConvNet,
    patches: list[Patch],
    tol: float = 1e-4,
) -> EquivalenceReport:
    """Certify ConvNet(P)[w] == FC(mean window w of P) over all patches.

    The FC route is computed independently (float64 window means,
    standardization, eval-mode forward, de-standardization); deviations are
    in physical units. An empty patch list passes vacuously with n = 0
    flagged.
    """
    max_dev = 0.0
    sum_dev = 0.0
    n_cells = 0
    worst = (-1, -1, -1)
    for p_idx, patch in enumerate(patches):
        cnn_map = infer_raster(net, patch.raster)
        means = window_average(patch.raster, net.window).data
        rows, cols = means.shape[1], means.shape[2]
        feats = means.reshape(patch.raster.bands, -1).T
        feats_norm = (feats - stats.feature_mean) / stats.feature_std
        fc = stats.denormalize_target(forward(params, feats_norm, "eval"))
        dev = np.abs(cnn_map.reshape(-1) - fc)
        idx = int(np.argmax(dev))
        if dev[idx] > max_dev:
            max_dev = float(dev[idx])
            worst = (p_idx, idx // cols, idx % cols)
        sum_dev += float(dev.sum())
        n_cells += dev.size
    return EquivalenceReport(
        max_abs_deviation=max_dev,
        mean_abs_deviation=sum_dev / n_cells if n_cells else 0.0,
        n_patches=len(patches),
        n_cells=n_cells,
        tol=tol,
        passed=(max_dev <= tol) if n_cells else True,
        vacuous=n_cells == 0,
        worst=worst,
    )


# ---------------------------------------------------------------------------
# CNN1 deployed-model file: "CNN1" magic, u32 manifest length, JSON manifest,
# little-endian parameter blob (per layer: kernel then bias) in the
# manifest-declared dtype (f32 or f16).
# ---------------------------------------------------------------------------

_CNN1_MAGIC = b"CNN1"
_CNN1_DTYPES = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}


def cnn1_bytes(net: ConvNet, equivalence: EquivalenceReport | None = None) -> bytes:
    dtype = _CNN1_DTYPES[net.dtype]
    manifest = {
        "format": "CNN1",
        "window": net.window,
        "front_layer": {
            "kind": "depthwise_average",
            "kernel": [net.window, net.window],
            "stride": net.window,
            "weight": net.front_weight,
            "trainable": False,
        },
        "channels": list(net.channels),
        "layers": [
            {"out": int(l.kernel.shape[0]), "in": int(l.kernel.shape[1]),
             "relu": l.relu}
            for l in net.layers
        ],
        "dtype": net.dtype,
        "parameter": net.parameter,
        "meta": net.meta,
        "equivalence": equivalence.to_json() if equivalence else None,
        "equivalence_sha256": equivalence.digest() if equivalence else None,
    }
    mbytes = json.dumps(manifest).encode()
    blob = b"".join(
        arr.astype(dtype).tobytes()
        for l in net.layers
        for arr in (l.kernel, l.bias)
    )
    return _CNN1_MAGIC + struct.pack("<I", len(mbytes)) + mbytes + blob


def save_cnn1(
    path: str | Path, net: ConvNet, equivalence: EquivalenceReport | None = None
) -> Path:
    path = Path(path)
    path.write_bytes(cnn1_bytes(net, equivalence))
    return path


def load_cnn1(path: str | Path) -> tuple[ConvNet, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _CNN1_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (mlen,) = struct.unpack_from("<I", blob, 4)
    manifest = json.loads(blob[8 : 8 + mlen])
    dtype = _CNN1_DTYPES[manifest["dtype"]]
    channels = tuple(manifest["channels"])
    layers = []
    offset = 8 + mlen
    for spec in manifest["layers"]:
        out_c, in_c = spec["out"], spec["in"]
        ksize = out_c * in_c * dtype.itemsize
        bsize = out_c * dtype.itemsize
        chunk = blob[offset : offset + ksize + bsize]
        if len(chunk) != ksize + bsize:
            raise FormatError(f"{path}: truncated parameter blob")
        kernel = np.frombuffer(chunk[:ksize], dtype=dtype).reshape(out_c, in_c)
        bias = np.frombuffer(chunk[ksize:], dtype=dtype)
        layers.append(
            ConvLayer(kernel.astype(np.float32), bias.astype(np.float32),
                      relu=bool(spec["relu"]))
        )
        offset += ksize + bsize
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    net = ConvNet(
        channels=channels,
        layers=layers,
        window=int(manifest["window"]),
        dtype=manifest["dtype"],
        parameter=manifest.get("parameter", "unknown"),
        meta=manifest.get("meta", {}),
    )
    return net, manifest
