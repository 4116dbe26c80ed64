"""Training-corpus construction: in-situ ingestion, spatio-temporal matching
of station measurements to patches, splitting and feature normalization.

The in-situ CSV schema (one measurement per row, ISO-8601 dates, decimal
degrees):

    station_id, municipality, location_name, distance_from_coast_m,
    date, depth_m, parameter, value, lat, lon

``parameter`` is one of ``turbidity_NTU`` or ``pH``. Matching pairs a
surface record with the patch whose center is nearest, provided the record
falls inside the patch footprint (608 m half-extent per axis) and the
acquisition date is within the temporal tolerance (3 days by default).
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError
from .raster import PATCH_SIZE, WINDOW, BandStack, GeoRef, Patch, window_average
from .sensor import PARAMETERS, PH, TURBIDITY, SceneTruth

CSV_COLUMNS = (
    "station_id", "municipality", "location_name", "distance_from_coast_m",
    "date", "depth_m", "parameter", "value", "lat", "lon",
)

# half of the 1216 m patch footprint, per axis
HALF_PATCH_EXTENT_M = PATCH_SIZE / 2 * 4.75


@dataclass(frozen=True)
class InSituRecord:
    """One station measurement of a water-quality parameter."""

    station_id: str
    municipality: str
    location_name: str
    distance_from_coast: float
    date: dt.date
    depth: float
    parameter: str
    value: float
    lat: float
    lon: float

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if not np.isfinite(self.value):
            raise ValueError("value must be finite")
        if self.parameter == TURBIDITY and self.value < 0:
            raise ValueError("turbidity must be >= 0")
        if self.parameter == PH and not 0.0 <= self.value <= 14.0:
            raise ValueError("pH must be in [0, 14]")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not -90 <= self.lat <= 90 or not -180 <= self.lon <= 180:
            raise ValueError("lat/lon out of range")


@dataclass
class Sample:
    """One training sample: averaged band features and a single target."""

    features: np.ndarray          # (7,) float64, window-averaged reflectances
    target: float
    parameter: str
    patch_id: str
    window: tuple[int, int]       # (row, col) in the 25x25 window grid
    station_id: str
    date: dt.date

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(7)
        if not np.isfinite(self.features).all() or not np.isfinite(self.target):
            raise ValueError("sample features/target must be finite")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.55
    test_fraction: float = 0.20
    val_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        total = self.train_fraction + self.test_fraction + self.val_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")


@dataclass
class IngestResult:
    records: list[InSituRecord]
    rejected: list[tuple[int, str]]   # (1-based data row number, reason)
    duplicates_removed: int


def ingest_records(csv_source: str | Path) -> IngestResult:
    """Parse the in-situ CSV; invalid rows are rejected with diagnostics.

    Duplicate (station, date, depth, parameter) rows are removed keeping the
    first occurrence, and the count is reported.
    """
    path = Path(csv_source)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing mandatory columns {missing}")
        records: list[InSituRecord] = []
        rejected: list[tuple[int, str]] = []
        seen: set[tuple] = set()
        duplicates = 0
        for idx, row in enumerate(reader, start=1):
            try:
                rec = InSituRecord(
                    station_id=row["station_id"].strip(),
                    municipality=row["municipality"].strip(),
                    location_name=row["location_name"].strip(),
                    distance_from_coast=float(row["distance_from_coast_m"]),
                    date=dt.date.fromisoformat(row["date"].strip()),
                    depth=float(row["depth_m"]),
                    parameter=row["parameter"].strip(),
                    value=float(row["value"]),
                    lat=float(row["lat"]),
                    lon=float(row["lon"]),
                )
            except (ValueError, KeyError) as exc:
                rejected.append((idx, str(exc)))
                continue
            key = (rec.station_id, rec.date, rec.depth, rec.parameter)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            records.append(rec)
    return IngestResult(records, rejected, duplicates)


def select_surface(records: list[InSituRecord]) -> list[InSituRecord]:
    """Keep, per (station, date, parameter), the record of minimum depth.

    Ties are broken by first occurrence; output preserves the input order of
    the winners.
    """
    best: dict[tuple, int] = {}
    for i, rec in enumerate(records):
        key = (rec.station_id, rec.date, rec.parameter)
        if key not in best or rec.depth < records[best[key]].depth:
            best[key] = i
    return [records[i] for i in sorted(best.values())]


@dataclass
class MatchResult:
    samples: list[Sample]
    unmatched: list[tuple[InSituRecord, str]]


def locate_window(georef: GeoRef, lat: float, lon: float) -> tuple[int, int] | None:
    """Window (row, col) of the patch containing ``(lat, lon)``; None when the
    point falls outside the patch footprint.

    Points landing in the 6 px margin never covered by a full averaging
    window are assigned the nearest edge window.
    """
    north_m, east_m = georef.latlon_offset_m(lat, lon)
    half = PATCH_SIZE / 2 * georef.gsd
    if abs(north_m) > half or abs(east_m) > half:
        return None
    row_px = PATCH_SIZE / 2 - north_m / georef.gsd
    col_px = PATCH_SIZE / 2 + east_m / georef.gsd
    grid = (PATCH_SIZE - WINDOW) // WINDOW + 1
    row = min(max(int(row_px // WINDOW), 0), grid - 1)
    col = min(max(int(col_px // WINDOW), 0), grid - 1)
    return row, col


def match(
    records: list[InSituRecord],
    patch_catalog: list[Patch],
    tolerance_days: int = 3,
) -> MatchResult:
    """Join surface records to patches in space and time.

    A record matches the catalog patch whose center is nearest (and whose
    footprint contains the record), with acquisition date within
    ``tolerance_days``. Distance ties are broken by nearest acquisition
    date, then by catalog order. Unmatched records are reported, not fatal.
    Output does not depend on record ordering beyond per-record results.
    """
    features_cache: dict[int, np.ndarray] = {}
    samples: list[Sample] = []
    unmatched: list[tuple[InSituRecord, str]] = []
    for rec in records:
        best: tuple[float, int, int] | None = None  # (dist, |days|, idx)
        for idx, patch in enumerate(patch_catalog):
            days = abs((patch.georef.acquisition_date - rec.date).days)
            if days > tolerance_days:
                continue
            north_m, east_m = patch.georef.latlon_offset_m(rec.lat, rec.lon)
            half = patch.raster.width / 2 * patch.georef.gsd
            if abs(north_m) > half or abs(east_m) > half:
                continue
            dist = max(abs(north_m), abs(east_m))
            key = (dist, days, idx)
            if best is None or key < best:
                best = key
        if best is None:
            unmatched.append((rec, "no patch within footprint and tolerance"))
            continue
        idx = best[2]
        patch = patch_catalog[idx]
        window = locate_window(patch.georef, rec.lat, rec.lon)
        if idx not in features_cache:
            features_cache[idx] = window_average(patch.raster, WINDOW).data
        wr, wc = window
        samples.append(
            Sample(
                features=features_cache[idx][:, wr, wc],
                target=rec.value,
                parameter=rec.parameter,
                patch_id=patch.patch_id,
                window=(wr, wc),
                station_id=rec.station_id,
                date=patch.georef.acquisition_date,
            )
        )
    return MatchResult(samples, unmatched)


@dataclass
class SplitResult:
    train: list[Sample]
    test: list[Sample]
    val: list[Sample]


def split(samples: list[Sample], spec: SplitSpec) -> SplitResult:
    """Deterministic shuffled split; sizes are rounded fractions with the
    rounding remainder assigned to train. The three lists partition the
    input exactly."""
    n = len(samples)
    n_test = int(round(n * spec.test_fraction))
    n_val = int(round(n * spec.val_fraction))
    n_train = n - n_test - n_val
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = [samples[i] for i in perm[:n_train]]
    test = [samples[i] for i in perm[n_train : n_train + n_test]]
    val = [samples[i] for i in perm[n_train + n_test :]]
    return SplitResult(train, test, val)


@dataclass
class NormStats:
    """Standardization statistics computed on the train split only."""

    feature_mean: np.ndarray   # (7,)
    feature_std: np.ndarray    # (7,)
    target_mean: float
    target_std: float

    def to_json(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NormStats":
        return cls(
            feature_mean=np.asarray(doc["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(doc["feature_std"], dtype=np.float64),
            target_mean=float(doc["target_mean"]),
            target_std=float(doc["target_std"]),
        )

    def normalize_target(self, t):
        return (t - self.target_mean) / self.target_std

    def denormalize_target(self, t):
        return t * self.target_std + self.target_mean


def normalize(
    samples: list[Sample], stats: NormStats | None = None
) -> tuple[list[Sample], NormStats]:
    """Standardize features and target to zero mean / unit std.

    Statistics are computed from ``samples`` when ``stats`` is None (do this
    on the train split) and reused verbatim otherwise (val/test). Constant
    features get std 1 so normalization stays invertible.
    """
    if not samples:
        raise ValueError("cannot normalize an empty sample list")
    X, y = as_arrays(samples)
    if stats is None:
        f_std = X.std(axis=0)
        t_std = float(y.std())
        stats = NormStats(
            feature_mean=X.mean(axis=0),
            feature_std=np.where(f_std < 1e-12, 1.0, f_std),
            target_mean=float(y.mean()),
            target_std=t_std if t_std >= 1e-12 else 1.0,
        )
    out = []
    for s in samples:
        out.append(
            replace(
                s,
                features=(s.features - stats.feature_mean) / stats.feature_std,
                target=float(stats.normalize_target(s.target)),
            )
        )
    return out, stats


def as_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.features for s in samples]).astype(np.float64)
    y = np.asarray([s.target for s in samples], dtype=np.float64)
    return X, y


def samples_from_scene(
    scene: BandStack,
    truth: SceneTruth,
    parameter: str,
    date: dt.date = dt.date(2024, 6, 15),
    scene_id: str = "synthetic",
) -> list[Sample]:
    """Build samples directly from a synthetic scene and its ground truth.

    Features are the scene-level 10x10-window band averages and targets the
    matching window means of the requested field; used for acceptance-scale
    corpora where no in-situ archive exists.
    """
    feats = window_average(scene, WINDOW).data
    grid = truth.window_grids[parameter]
    samples = []
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            samples.append(
                Sample(
                    features=feats[:, r, c],
                    target=float(grid[r, c]),
                    parameter=parameter,
                    patch_id=scene_id,
                    window=(r, c),
                    station_id=scene_id,
                    date=date,
                )
            )
    return samples


# ---------------------------------------------------------------------------
# SMP1 sample store
#
# Header (16 bytes): magic "SMP1", u32 record count, u32 manifest length,
# 4 reserved bytes. Then the JSON manifest (string tables, provenance,
# optional normalization stats), then fixed-width 88-byte records:
# 7 x f64 features, f64 target, u8 parameter code, u32 patch index,
# u16 window row, u16 window col, u32 station index, i32 date ordinal,
# 7 pad bytes. All little-endian.
# ---------------------------------------------------------------------------

_SMP1_MAGIC = b"SMP1"
_SMP1_HEADER = struct.Struct("<4sII4s")
_SMP1_RECORD = struct.Struct("<8dBIHHIi7x")
_PARAM_CODES = {TURBIDITY: 0, PH: 1}
_PARAM_NAMES = {v: k for k, v in _PARAM_CODES.items()}


def save_samples(
    path: str | Path,
    samples: list[Sample],
    stats: NormStats | None = None,
    provenance: dict | None = None,
) -> Path:
    path = Path(path)
    patch_ids = sorted({s.patch_id for s in samples})
    station_ids = sorted({s.station_id for s in samples})
    p_idx = {p: i for i, p in enumerate(patch_ids)}
    s_idx = {s: i for i, s in enumerate(station_ids)}
    manifest = {
        "patch_ids": patch_ids,
        "station_ids": station_ids,
        "normalization": stats.to_json() if stats else None,
        "provenance": provenance or {},
    }
    mbytes = json.dumps(manifest).encode()
    parts = [_SMP1_HEADER.pack(_SMP1_MAGIC, len(samples), len(mbytes), b"\x00" * 4),
             mbytes]
    for s in samples:
        parts.append(
            _SMP1_RECORD.pack(
                *s.features.tolist(), s.target, _PARAM_CODES[s.parameter],
                p_idx[s.patch_id], s.window[0], s.window[1],
                s_idx[s.station_id], s.date.toordinal(),
            )
        )
    path.write_bytes(b"".join(parts))
    return path


def load_samples(path: str | Path) -> tuple[list[Sample], NormStats | None, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _SMP1_HEADER.size:
        raise FormatError(f"{path}: shorter than an SMP1 header")
    magic, count, mlen, _ = _SMP1_HEADER.unpack_from(blob)
    if magic != _SMP1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    offset = _SMP1_HEADER.size
    manifest = json.loads(blob[offset : offset + mlen])
    offset += mlen
    expected = count * _SMP1_RECORD.size
    if len(blob) - offset != expected:
        raise FormatError(
            f"{path}: {len(blob) - offset} record bytes, expected {expected}"
        )
    patch_ids = manifest["patch_ids"]
    station_ids = manifest["station_ids"]
    samples = []
    for i in range(count):
        fields = _SMP1_RECORD.unpack_from(blob, offset + i * _SMP1_RECORD.size)
        feats = np.asarray(fields[:7], dtype=np.float64)
        target, pcode, pidx, wr, wc, sidx, ordinal = fields[7:]
        samples.append(
            Sample(
                features=feats, target=target, parameter=_PARAM_NAMES[pcode],
                patch_id=patch_ids[pidx], window=(wr, wc),
                station_id=station_ids[sidx], date=dt.date.fromordinal(ordinal),
            )
        )
    stats_doc = manifest.get("normalization")
    stats = NormStats.from_json(stats_doc) if stats_doc else None
    return samples, stats, manifest
