"""Raster containers, windowed averaging, scene tiling and mosaicking.

Conventions used across the whole package:

* arrays are band-planar, shape ``(bands, height, width)``, C order;
* row 0 is the northern edge, column 0 the western edge;
* a patch is 256x256 px (a 1216 m square at the 4.75 m/px product pitch);
* the inference front end averages non-overlapping 10x10 windows, so one
  256 px patch maps onto a 25x25 grid and the last 6 rows/columns of the
  patch are never averaged (dropped by design).

Containers are treated as immutable after construction: operations return
new objects and never mutate their inputs, so everything here is safe to
share across threads.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, InconsistencyError

PATCH_SIZE = 256        # px per patch side; 1216 m at 4.75 m/px
WINDOW = 10             # averaging window of the inference front end
PRODUCT_GSD = 4.75      # m/px of the simulated multispectral product
MS_BAND_IDS = ("MS1", "MS2", "MS3", "MS4", "MS5", "MS6", "MS7")
REFLECTANCE_MAX = 1.2   # ToA overshoot tolerated before a value is flagged

_EARTH_RADIUS_M = 6_371_000.0
_PAT1_MAGIC = b"PAT1"
_PAT1_HEADER = struct.Struct("<4sIIIfI8s")  # 32 bytes
_PAT1_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


def meters_per_degree(lat: float) -> tuple[float, float]:
    """(meters per degree latitude, meters per degree longitude) at ``lat``.

    Spherical-Earth approximation; adequate for the sub-kilometre offsets
    handled here (center-point georeferencing only, no map projections).
    """
    m_per_deg = math.pi * _EARTH_RADIUS_M / 180.0
    return m_per_deg, m_per_deg * math.cos(math.radians(lat))


@dataclass(frozen=True)
class GeoRef:
    """Center-point georeference of a raster."""

    center_lat: float
    center_lon: float
    gsd: float
    acquisition_date: dt.date

    def __post_init__(self):
        if not -90.0 <= self.center_lat <= 90.0:
            raise ValueError(f"latitude {self.center_lat} outside [-90, 90]")
        if not -180.0 <= self.center_lon <= 180.0:
            raise ValueError(f"longitude {self.center_lon} outside [-180, 180]")
        if not self.gsd > 0:
            raise ValueError("gsd must be positive")

    def offset_latlon(self, north_m: float, east_m: float) -> tuple[float, float]:
        """Lat/lon of a point displaced from the center by metres."""
        m_lat, m_lon = meters_per_degree(self.center_lat)
        return self.center_lat + north_m / m_lat, self.center_lon + east_m / m_lon

    def latlon_offset_m(self, lat: float, lon: float) -> tuple[float, float]:
        """(north_m, east_m) displacement of ``(lat, lon)`` from the center."""
        m_lat, m_lon = meters_per_degree(self.center_lat)
        return (lat - self.center_lat) * m_lat, (lon - self.center_lon) * m_lon

    def to_json(self) -> dict:
        return {
            "center_lat": self.center_lat,
            "center_lon": self.center_lon,
            "gsd": self.gsd,
            "acquisition_date": self.acquisition_date.isoformat(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GeoRef":
        return cls(
            center_lat=float(doc["center_lat"]),
            center_lon=float(doc["center_lon"]),
            gsd=float(doc["gsd"]),
            acquisition_date=dt.date.fromisoformat(doc["acquisition_date"]),
        )


@dataclass
class BandStack:
    """Dense multi-band raster with a uniform ground sampling distance.

    ``data`` is band-planar ``(bands, height, width)``; ``band_ids`` names
    each plane in canonical ascending-band order (MS1..MS7 for the
    multispectral product).
    """

    width: int
    height: int
    bands: int
    gsd: float
    data: np.ndarray
    band_ids: tuple[str, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise DimensionError("width, height and bands must all be >= 1")
        if not self.gsd > 0:
            raise ValueError("gsd must be positive")
        self.band_ids = tuple(self.band_ids)
        if len(self.band_ids) != self.bands:
            raise InconsistencyError(
                f"{len(self.band_ids)} band ids for {self.bands} bands"
            )
        if len(set(self.band_ids)) != self.bands:
            raise InconsistencyError("band ids must be distinct")
        self.data = np.asarray(self.data)
        if self.data.size != self.width * self.height * self.bands:
            raise DimensionError(
                f"data has {self.data.size} values, expected "
                f"{self.width * self.height * self.bands}"
            )
        self.data = self.data.reshape(self.bands, self.height, self.width)

    @classmethod
    def from_array(
        cls,
        data: np.ndarray,
        gsd: float,
        band_ids: tuple[str, ...] | None = None,
    ) -> "BandStack":
        data = np.asarray(data)
        if data.ndim == 2:
            data = data[None, :, :]
        if data.ndim != 3:
            raise DimensionError("expected a (bands, height, width) array")
        bands, height, width = data.shape
        if band_ids is None:
            band_ids = MS_BAND_IDS if bands == 7 else tuple(
                f"B{i}" for i in range(bands)
            )
        return cls(width=width, height=height, bands=bands, gsd=gsd,
                   data=data, band_ids=band_ids)

    def band(self, band_id: str) -> np.ndarray:
        return self.data[self.band_ids.index(band_id)]


@dataclass
class Patch:
    """One 256x256x7 reflectance chip, the unit of inference.

    Reflectances are expected in [0, 1.2]; out-of-range values do not make
    construction fail but their count is kept in ``flagged_values`` so
    callers can report them. Non-finite values are rejected outright.
    """

    raster: BandStack
    georef: GeoRef
    patch_id: str = ""
    flagged_values: int = field(init=False, default=0)

    def __post_init__(self):
        r = self.raster
        if r.width != PATCH_SIZE or r.height != PATCH_SIZE:
            raise DimensionError(
                f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {r.width}x{r.height}"
            )
        if r.bands != 7:
            raise DimensionError(f"patch must have 7 bands, got {r.bands}")
        if not np.isfinite(r.data).all():
            raise ValueError(f"patch {self.patch_id!r} contains non-finite values")
        self.flagged_values = int(
            np.count_nonzero((r.data < 0.0) | (r.data > REFLECTANCE_MAX))
        )


@dataclass(frozen=True)
class TileIndex:
    """Row-major placement record produced by :func:`tile_scene`.

    ``placements`` holds ``(patch_row_origin, patch_col_origin)`` pixel
    origins into the source scene, stride ``patch_size``, zero overlap.
    """

    scene_width: int
    scene_height: int
    placements: tuple[tuple[int, int], ...]
    patch_size: int = PATCH_SIZE
    gsd: float = PRODUCT_GSD

    @property
    def tiles_down(self) -> int:
        return self.scene_height // self.patch_size

    @property
    def tiles_across(self) -> int:
        return self.scene_width // self.patch_size


@dataclass
class TileResult:
    patches: list[Patch]
    index: TileIndex
    margin_rows: int
    margin_cols: int


def window_average(raster: BandStack, window: int) -> BandStack:
    """Mean over non-overlapping window x window blocks, per band.

    Output size per axis is ``floor((size - window) / window) + 1``; trailing
    rows/columns not covered by a full window are dropped (for a 256 px patch
    and window 10 that is the last 6 rows and columns). Accumulation is in
    float64. The output gsd is scaled by the window size.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if raster.width < window or raster.height < window:
        raise DimensionError(
            f"window {window} larger than raster {raster.width}x{raster.height}"
        )
    out_h = (raster.height - window) // window + 1
    out_w = (raster.width - window) // window + 1
    cropped = raster.data[:, : out_h * window, : out_w * window].astype(np.float64)
    blocks = cropped.reshape(raster.bands, out_h, window, out_w, window)
    means = blocks.mean(axis=(2, 4))
    return BandStack(
        width=out_w, height=out_h, bands=raster.bands,
        gsd=raster.gsd * window, data=means, band_ids=raster.band_ids,
    )


def window_fraction(mask: np.ndarray, window: int = WINDOW) -> np.ndarray:
    """Fraction of true pixels per non-overlapping window of a 2-D mask."""
    stack = BandStack.from_array(mask.astype(np.float64), gsd=1.0, band_ids=("mask",))
    return window_average(stack, window).data[0]


def tile_scene(
    scene: BandStack,
    scene_georef: GeoRef | None = None,
    patch_size: int = PATCH_SIZE,
    patch_id_prefix: str = "patch",
) -> TileResult:
    """Cut a 7-band scene into non-overlapping 256 px patches.

    Patches cover the maximal patch-aligned sub-scene anchored at the
    north-west corner; leftover margins (< patch_size px) are excluded and
    reported in the result. Patch georefs are derived from the scene center
    when ``scene_georef`` is given, otherwise a placeholder at (0, 0) with
    the scene gsd is used.
    """
    if scene.bands != 7:
        raise DimensionError(f"scene must have 7 bands, got {scene.bands}")
    if scene.width < patch_size or scene.height < patch_size:
        raise DimensionError(
            f"scene {scene.width}x{scene.height} smaller than one "
            f"{patch_size} px patch"
        )
    down = scene.height // patch_size
    across = scene.width // patch_size
    margin_rows = scene.height - down * patch_size
    margin_cols = scene.width - across * patch_size

    if scene_georef is None:
        scene_georef = GeoRef(0.0, 0.0, scene.gsd, dt.date(1970, 1, 1))

    placements = []
    patches = []
    for i in range(down):
        for j in range(across):
            r0, c0 = i * patch_size, j * patch_size
            placements.append((r0, c0))
            chip = scene.data[:, r0 : r0 + patch_size, c0 : c0 + patch_size].copy()
            # patch center offset from the scene center, in metres
            north_m = (scene.height / 2.0 - (r0 + patch_size / 2.0)) * scene.gsd
            east_m = ((c0 + patch_size / 2.0) - scene.width / 2.0) * scene.gsd
            lat, lon = scene_georef.offset_latlon(north_m, east_m)
            georef = GeoRef(lat, lon, scene.gsd, scene_georef.acquisition_date)
            patches.append(
                Patch(
                    raster=BandStack.from_array(chip, scene.gsd, scene.band_ids),
                    georef=georef,
                    patch_id=f"{patch_id_prefix}_{i:03d}_{j:03d}",
                )
            )
    index = TileIndex(
        scene_width=scene.width,
        scene_height=scene.height,
        placements=tuple(placements),
        patch_size=patch_size,
        gsd=scene.gsd,
    )
    return TileResult(patches, index, margin_rows, margin_cols)


def mosaic(
    grids: list[np.ndarray],
    index: TileIndex,
    band_ids: tuple[str, ...] | None = None,
) -> BandStack:
    """Reassemble per-patch grids into one scene-level raster.

    One grid per placement, all sharing shape ``(cells, cells)`` or
    ``(bands, cells, cells)``. Grid cell (i, j) of patch k lands exactly at
    the scene cell implied by placement k; placement copies only, so the
    mosaic reproduces per-patch values bit for bit.
    """
    if len(grids) != len(index.placements):
        raise InconsistencyError(
            f"{len(grids)} grids for {len(index.placements)} placements"
        )
    arrays = [np.asarray(g) for g in grids]
    arrays = [a[None, :, :] if a.ndim == 2 else a for a in arrays]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise InconsistencyError(f"grids disagree on shape: {sorted(shapes)}")
    bands, cells_h, cells_w = arrays[0].shape
    if cells_h != cells_w:
        raise DimensionError("per-patch grids must be square")
    cells = cells_h

    out = np.zeros(
        (bands, cells * index.tiles_down, cells * index.tiles_across),
        dtype=arrays[0].dtype,
    )
    for grid, (r0, c0) in zip(arrays, index.placements):
        gr = r0 // index.patch_size * cells
        gc = c0 // index.patch_size * cells
        out[:, gr : gr + cells, gc : gc + cells] = grid
    if band_ids is None:
        band_ids = tuple(f"B{i}" for i in range(bands))
    # each mosaic cell covers patch_size / cells scene pixels
    return BandStack.from_array(
        out, gsd=index.gsd * index.patch_size / cells, band_ids=band_ids
    )


def random_patches(
    n: int,
    seed: int,
    gsd: float = PRODUCT_GSD,
    date: dt.date = dt.date(2024, 6, 15),
) -> list[Patch]:
    """Uniform-random reflectance patches in [0, 1]; seeded, for checks."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        data = rng.uniform(0.0, 1.0, size=(7, PATCH_SIZE, PATCH_SIZE))
        georef = GeoRef(0.0, 0.0, gsd, date)
        out.append(Patch(BandStack.from_array(data, gsd, MS_BAND_IDS), georef,
                         patch_id=f"random_{i:04d}"))
    return out


# ---------------------------------------------------------------------------
# PAT1 file format
#
# 32-byte header: magic "PAT1", u32 width, u32 height, u32 bands, f32 gsd,
# u32 dtype tag (0 = f32 LE, 1 = u8), 8 reserved bytes; then the band-planar
# payload. A JSON sidecar (same basename, ".json") holds georef and band_ids.
# ---------------------------------------------------------------------------


def write_pat1(
    path: str | Path,
    stack: BandStack,
    georef: GeoRef | None = None,
    extra: dict | None = None,
) -> Path:
    """Write a BandStack as a PAT1 file plus its JSON sidecar."""
    path = Path(path)
    if stack.data.dtype == np.uint8:
        tag, payload = 1, stack.data.astype("u1")
    else:
        tag, payload = 0, stack.data.astype("<f4")
    header = _PAT1_HEADER.pack(
        _PAT1_MAGIC, stack.width, stack.height, stack.bands,
        float(stack.gsd), tag, b"\x00" * 8,
    )
    path.write_bytes(header + payload.tobytes())
    sidecar = {"band_ids": list(stack.band_ids)}
    if georef is not None:
        sidecar["georef"] = georef.to_json()
    if extra:
        sidecar["extra"] = extra
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return path


def read_pat1(path: str | Path) -> tuple[BandStack, dict]:
    """Read a PAT1 file; returns the stack and its parsed sidecar (or {})."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PAT1_HEADER.size:
        raise FormatError(f"{path}: shorter than a PAT1 header")
    magic, width, height, bands, gsd, tag, _ = _PAT1_HEADER.unpack_from(blob)
    if magic != _PAT1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if tag not in _PAT1_DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    dtype = _PAT1_DTYPES[tag]
    expected = width * height * bands * dtype.itemsize
    payload = blob[_PAT1_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(bands, height, width)

    sidecar_path = path.with_suffix(".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    band_ids = tuple(sidecar.get("band_ids", (f"B{i}" for i in range(bands))))
    stack = BandStack(width=width, height=height, bands=bands, gsd=gsd,
                      data=data.copy(), band_ids=band_ids)
    return stack, sidecar


def sidecar_georef(sidecar: dict) -> GeoRef | None:
    doc = sidecar.get("georef")
    return GeoRef.from_json(doc) if doc else None
