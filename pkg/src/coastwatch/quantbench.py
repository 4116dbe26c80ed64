"""FP16 deployment checks: quantization, size accounting, latency benchmark.

The flight accelerator is emulated numerically: parameters are rounded to
IEEE-754 binary16 (round-to-nearest-even) and re-expanded, model size is
measured on the serialized deployed file, and inference latency is a desk
benchmark on the local host. The flight reference figures (40.5 ms per
inference, 24 FPS on the mission VPU; 250 MB mission size ceiling) ride
along as metadata and are never an acceptance gate for desk hardware.
"""

from __future__ import annotations

import copy
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convnet import ConvNet, cnn1_bytes, infer_patch
from .errors import NumericError
from .raster import Patch

MISSION_SIZE_LIMIT_BYTES = 250 * 1024 * 1024
REFERENCE_VPU = {
    "hardware": "Myriad-2 class VPU (mission reference)",
    "ms_per_inference": 40.5,
    "fps": 24.0,
}


def quantize_fp16(net: ConvNet) -> ConvNet:
    """Round every parameter to binary16 and re-expand.

    Round-to-nearest-even (the IEEE default, numpy's cast). Values whose
    magnitude exceeds the binary16 range overflow to infinity and raise.
    Idempotent: re-quantizing changes nothing.
    """
    out = copy.deepcopy(net)
    for k, layer in enumerate(out.layers):
        for name in ("kernel", "bias"):
            arr = getattr(layer, name).astype(np.float16)
            if not np.isfinite(arr).all():
                raise NumericError(
                    f"layer {k + 1} {name}: value overflows binary16 range"
                )
            setattr(layer, name, arr.astype(np.float32))
    out.dtype = "f16"
    out.meta = dict(net.meta, quantized="fp16_round_nearest_even")
    return out


@dataclass
class QuantReport:
    model_bytes_fp32: int
    model_bytes_fp16: int
    max_map_deviation: float
    mean_map_deviation: float
    patches_tested: int
    threshold: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "model_bytes_fp32": self.model_bytes_fp32,
            "model_bytes_fp16": self.model_bytes_fp16,
            "max_map_deviation": self.max_map_deviation,
            "mean_map_deviation": self.mean_map_deviation,
            "patches_tested": self.patches_tested,
            "threshold": self.threshold,
            "passed": self.passed,
            "mission_size_limit_bytes": MISSION_SIZE_LIMIT_BYTES,
        }


def compare_quantized(
    net32: ConvNet,
    net16: ConvNet,
    patches: list[Patch],
    threshold: float = 0.05,
) -> QuantReport:
    """Per-cell deviation statistics between the two precisions.

    Both networks run through the same inference path; deviations are in
    physical units. ``passed`` gates on the maximum deviation.
    """
    if not patches:
        raise ValueError("need at least one patch to compare")
    max_dev = 0.0
    total = 0.0
    cells = 0
    for patch in patches:
        a = infer_patch(net32, patch).values
        b = infer_patch(net16, patch).values
        dev = np.abs(a - b)
        max_dev = max(max_dev, float(dev.max()))
        total += float(dev.sum())
        cells += dev.size
    return QuantReport(
        model_bytes_fp32=len(cnn1_bytes(net32)),
        model_bytes_fp16=len(cnn1_bytes(net16)),
        max_map_deviation=max_dev,
        mean_map_deviation=total / cells,
        patches_tested=len(patches),
        threshold=threshold,
        passed=max_dev < threshold,
    )


@dataclass
class BenchReport:
    ms_per_inference: float       # median
    ms_p95: float
    fps: float
    patches: int
    reps: int
    warmup: int
    hardware_descriptor: str
    reference: dict

    def to_json(self) -> dict:
        return {
            "ms_per_inference": self.ms_per_inference,
            "ms_p95": self.ms_p95,
            "fps": self.fps,
            "patches": self.patches,
            "reps": self.reps,
            "warmup": self.warmup,
            "hardware_descriptor": self.hardware_descriptor,
            "reference": self.reference,
        }


def _hardware_descriptor() -> str:
    info = platform.uname()
    cpu = platform.processor() or info.machine
    return f"{info.system} {info.machine} ({cpu}), python {platform.python_version()}, numpy {np.__version__}"


def bench(
    net: ConvNet,
    patches: list[Patch],
    warmup: int = 5,
    reps: int = 100,
) -> BenchReport:
    """Wall-clock per single-patch inference; median and p95 over ``reps``.

    The workload is deterministic (patches cycled in order); only the timing
    is nondeterministic. FPS is 1000 / median by definition.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not patches:
        raise ValueError("need at least one patch to benchmark")
    for i in range(warmup):
        infer_patch(net, patches[i % len(patches)])
    times_ms = np.empty(reps)
    for i in range(reps):
        patch = patches[i % len(patches)]
        t0 = time.perf_counter()
        infer_patch(net, patch)
        times_ms[i] = (time.perf_counter() - t0) * 1000.0
    median = float(np.median(times_ms))
    return BenchReport(
        ms_per_inference=median,
        ms_p95=float(np.percentile(times_ms, 95)),
        fps=1000.0 / median,
        patches=len(patches),
        reps=reps,
        warmup=warmup,
        hardware_descriptor=_hardware_descriptor(),
        reference=dict(REFERENCE_VPU),
    )


def write_report(path: str | Path, report) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return path
