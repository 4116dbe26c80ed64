"""Threshold contaminant maps into binary anomaly maps and compact alerts.

Only anomalous information leaves the pipeline: per-patch alert messages
carry exceedance counts and summary statistics of the violating values,
never a raster. The scene workflow is tile -> infer each patch ->
threshold -> mosaic the binary maps back to scene extent.

NaN map cells are invalid: they never alert and are counted separately.
When cloud masks are available, any window at least half covered by cloud
is invalidated before thresholding (the fraction is configurable).
"""

from __future__ import annotations

import datetime as dt
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convnet import ContaminantMap, ConvNet, infer_patch
from .errors import InconsistencyError
from .raster import WINDOW, BandStack, GeoRef, TileIndex, mosaic, tile_scene, window_fraction
from .sensor import MaskSet, PARAMETERS, PH, TURBIDITY

MAX_ALERT_BYTES = 512
MAX_SCENE_ID_LEN = 64

# Default policies, fully configurable: sustained turbidity above 10 NTU
# pressures aquatic organisms; pH outside [6.0, 9.0] leaves the tolerance
# band of sensitive freshwater species (salmonid distress below 6.0).
DEFAULT_POLICIES = {
    TURBIDITY: {"upper_bound": 10.0},
    PH: {"lower_bound": 6.0, "upper_bound": 9.0},
}


@dataclass(frozen=True)
class ThresholdPolicy:
    """Bounds for one parameter plus the patch-level alert gate.

    ``min_exceed_fraction`` is the fraction of valid cells that must violate
    before a patch emits a message (default 0: any violation alerts).
    ``cloud_invalid_fraction`` is the window cloud coverage at and above
    which a window is invalidated instead of thresholded.
    """

    parameter: str
    lower_bound: float | None = None
    upper_bound: float | None = None
    min_exceed_fraction: float = 0.0
    cloud_invalid_fraction: float = 0.5

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if self.lower_bound is None and self.upper_bound is None:
            raise ValueError("policy needs at least one bound")
        if (self.lower_bound is not None and self.upper_bound is not None
                and not self.lower_bound < self.upper_bound):
            raise ValueError("lower bound must be below upper bound")
        if not 0.0 <= self.min_exceed_fraction <= 1.0:
            raise ValueError("min_exceed_fraction must be in [0, 1]")

    @property
    def policy_id(self) -> str:
        parts = [self.parameter]
        if self.lower_bound is not None:
            parts.append(f"lo={self.lower_bound:g}")
        if self.upper_bound is not None:
            parts.append(f"hi={self.upper_bound:g}")
        return "|".join(parts)

    @classmethod
    def default_for(cls, parameter: str) -> "ThresholdPolicy":
        return cls(parameter=parameter, **DEFAULT_POLICIES[parameter])

    @classmethod
    def from_json(cls, doc: dict) -> "ThresholdPolicy":
        return cls(
            parameter=doc["parameter"],
            lower_bound=doc.get("lower_bound"),
            upper_bound=doc.get("upper_bound"),
            min_exceed_fraction=float(doc.get("min_exceed_fraction", 0.0)),
            cloud_invalid_fraction=float(doc.get("cloud_invalid_fraction", 0.5)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class AlertMap:
    """Binary exceedance grid for one patch; invalid cells never alert."""

    cells: np.ndarray              # uint8, 1 where the policy is violated
    invalid: np.ndarray            # bool, NaN or cloud-invalidated windows
    policy_id: str
    georef: GeoRef
    parameter: str

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        self.invalid = np.asarray(self.invalid, dtype=bool)
        if self.cells.shape != self.invalid.shape:
            raise InconsistencyError("cells and invalid mask differ in shape")

    @property
    def exceed_count(self) -> int:
        return int(self.cells.sum())

    @property
    def valid_count(self) -> int:
        return int(self.cells.size - self.invalid.sum())

    @property
    def exceed_fraction(self) -> float:
        """Fraction of valid cells violating the policy (0 if none valid)."""
        return self.exceed_count / self.valid_count if self.valid_count else 0.0


def threshold(cmap: ContaminantMap, policy: ThresholdPolicy) -> AlertMap:
    """Cell-wise bound check of a contaminant map."""
    if cmap.parameter != policy.parameter:
        raise InconsistencyError(
            f"map is {cmap.parameter!r}, policy is {policy.parameter!r}"
        )
    values = cmap.values
    invalid = ~np.isfinite(values)
    violate = np.zeros(values.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        if policy.lower_bound is not None:
            violate |= values < policy.lower_bound
        if policy.upper_bound is not None:
            violate |= values > policy.upper_bound
    violate &= ~invalid
    return AlertMap(
        cells=violate.astype(np.uint8),
        invalid=invalid,
        policy_id=policy.policy_id,
        georef=cmap.georef,
        parameter=cmap.parameter,
    )


@dataclass
class AlertMessage:
    """Compact downlink record for one alerting patch; no raster inside."""

    scene_id: str
    lat: float
    lon: float
    acquired: dt.date
    parameter: str
    policy_id: str
    exceed_count: int
    exceed_fraction: float
    invalid_count: int
    violating_min: float
    violating_max: float
    violating_mean: float
    timestamp: str                # ISO-8601 UTC, second resolution

    def __post_init__(self):
        if len(self.scene_id) > MAX_SCENE_ID_LEN:
            raise ValueError(
                f"scene id longer than {MAX_SCENE_ID_LEN} characters"
            )
        if self.exceed_count <= 0:
            raise ValueError("alert messages require at least one violation")


# serialization writes fields in this fixed order
_ALERT_FIELDS = (
    "scene_id", "lat", "lon", "acquired", "parameter", "policy_id",
    "exceed_count", "exceed_fraction", "invalid_count",
    "violating_min", "violating_max", "violating_mean", "timestamp",
)


def make_message(
    scene_id: str,
    cmap: ContaminantMap,
    amap: AlertMap,
    policy: ThresholdPolicy,
    timestamp: str | None = None,
) -> AlertMessage | None:
    """Build the patch message, or None when the alert gate is not met.

    A message requires at least one violating cell and an exceed fraction
    strictly above the policy minimum.
    """
    if amap.exceed_count == 0 or amap.exceed_fraction <= policy.min_exceed_fraction:
        return None
    violating = cmap.values[amap.cells.astype(bool)]
    if timestamp is None:
        timestamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    return AlertMessage(
        scene_id=scene_id,
        lat=cmap.georef.center_lat,
        lon=cmap.georef.center_lon,
        acquired=cmap.georef.acquisition_date,
        parameter=cmap.parameter,
        policy_id=amap.policy_id,
        exceed_count=amap.exceed_count,
        exceed_fraction=amap.exceed_fraction,
        invalid_count=int(amap.invalid.sum()),
        violating_min=float(violating.min()),
        violating_max=float(violating.max()),
        violating_mean=float(violating.mean()),
        timestamp=timestamp,
    )


def serialize_alert(msg: AlertMessage) -> bytes:
    """Canonical single-line JSON record, fixed field order, <= 512 bytes."""
    doc = {}
    for name in _ALERT_FIELDS:
        value = getattr(msg, name)
        doc[name] = value.isoformat() if isinstance(value, dt.date) else value
    line = json.dumps(doc, separators=(",", ":")).encode()
    if len(line) > MAX_ALERT_BYTES:
        raise ValueError(f"serialized alert is {len(line)} bytes > {MAX_ALERT_BYTES}")
    return line


def parse_alert(line: bytes | str) -> AlertMessage:
    doc = json.loads(line)
    doc["acquired"] = dt.date.fromisoformat(doc["acquired"])
    return AlertMessage(**doc)


@dataclass
class SceneAlertResult:
    mosaic: BandStack             # uint8 binary exceedance raster
    messages: list[AlertMessage]
    maps: list[ContaminantMap]
    alert_maps: list[AlertMap]
    index: TileIndex


def run_scene(
    scene: BandStack,
    net: ConvNet,
    policy: ThresholdPolicy,
    scene_georef: GeoRef | None = None,
    masks: MaskSet | None = None,
    scene_id: str = "scene",
    timestamp: str | None = None,
    jobs: int = 1,
) -> SceneAlertResult:
    """Tile a scene, infer every patch, threshold, and mosaic the results.

    Windows at least ``policy.cloud_invalid_fraction`` covered by cloud are
    set to NaN before thresholding. Messages are emitted only for patches
    whose exceedance clears the policy gate; the mosaic reproduces the
    per-patch alert cells exactly.
    """
    tiles = tile_scene(scene, scene_georef, patch_id_prefix=scene_id)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            maps = list(pool.map(lambda p: infer_patch(net, p), tiles.patches))
    else:
        maps = [infer_patch(net, p) for p in tiles.patches]

    if masks is not None:
        ps = tiles.index.patch_size
        for cmap, (r0, c0) in zip(maps, tiles.index.placements):
            cloud = masks.cloud[r0 : r0 + ps, c0 : c0 + ps]
            frac = window_fraction(cloud, WINDOW)
            cmap.values = np.where(
                frac >= policy.cloud_invalid_fraction, np.nan, cmap.values
            )

    alert_maps = [threshold(m, policy) for m in maps]
    messages = []
    for cmap, amap in zip(maps, alert_maps):
        msg = make_message(scene_id, cmap, amap, policy, timestamp)
        if msg is not None:
            messages.append(msg)
    mosaicked = mosaic(
        [a.cells for a in alert_maps], tiles.index, band_ids=(policy.policy_id,)
    )
    return SceneAlertResult(
        mosaic=mosaicked,
        messages=messages,
        maps=maps,
        alert_maps=alert_maps,
        index=tiles.index,
    )
