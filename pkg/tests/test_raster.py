import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coastwatch.errors import DimensionError, FormatError, InconsistencyError
from coastwatch.raster import (
    MS_BAND_IDS,
    BandStack,
    GeoRef,
    Patch,
    TileIndex,
    mosaic,
    random_patches,
    read_pat1,
    sidecar_georef,
    tile_scene,
    window_average,
    window_fraction,
    write_pat1,
)

RNG = np.random.default_rng(1234)


def stack(data, gsd=4.75):
    return BandStack.from_array(np.asarray(data, dtype=np.float64), gsd)


class TestWindowAverage:
    def test_patch_window_shape(self):
        r = stack(RNG.uniform(0, 1, (7, 256, 256)))
        out = window_average(r, 10)
        assert (out.bands, out.height, out.width) == (7, 25, 25)
        assert out.gsd == pytest.approx(47.5)

    def test_constant_raster(self):
        r = stack(np.full((3, 64, 64), 0.73))
        out = window_average(r, 10)
        assert np.allclose(out.data, 0.73)

    def test_block_mean_oracle(self):
        # 20x20 raster with values 1..400 row-major vs nested-loop means
        vals = np.arange(1, 401, dtype=np.float64).reshape(1, 20, 20)
        out = window_average(stack(vals), 10)
        expected = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                acc = 0.0
                for r in range(10):
                    for c in range(10):
                        acc += vals[0, i * 10 + r, j * 10 + c]
                expected[i, j] = acc / 100.0
        assert np.allclose(out.data[0], expected)

    def test_window_one_is_identity(self):
        r = stack(RNG.uniform(0, 1, (2, 13, 17)))
        out = window_average(r, 1)
        assert np.array_equal(out.data, r.data)

    def test_trailing_margin_dropped(self):
        r = stack(RNG.uniform(0, 1, (1, 26, 37)))
        out = window_average(r, 10)
        assert (out.height, out.width) == (2, 3)

    def test_window_larger_than_raster(self):
        r = stack(RNG.uniform(0, 1, (1, 8, 8)))
        with pytest.raises(DimensionError):
            window_average(r, 10)

    @settings(max_examples=25, deadline=None)
    @given(
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**31),
    )
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (2, 30, 30))
        y = rng.uniform(-1, 1, (2, 30, 30))
        lhs = window_average(stack(a * x + b * y), 10).data
        rhs = a * window_average(stack(x), 10).data + b * window_average(
            stack(y), 10
        ).data
        assert np.allclose(lhs, rhs, rtol=1e-6, atol=1e-12)


class TestWindowFraction:
    def test_fraction_counts_true_pixels(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[:10, :5] = True  # half of the first window
        frac = window_fraction(mask, 10)
        assert frac.shape == (2, 2)
        assert frac[0, 0] == pytest.approx(0.5)
        assert frac[1, 1] == 0.0


class TestTileScene:
    def test_512_scene_four_patches(self):
        scene = stack(RNG.uniform(0, 1, (7, 512, 512)))
        result = tile_scene(scene)
        assert len(result.patches) == 4
        assert result.index.placements == ((0, 0), (0, 256), (256, 0), (256, 256))
        assert result.margin_rows == 0 and result.margin_cols == 0

    def test_single_patch_identity(self):
        scene = stack(RNG.uniform(0, 1, (7, 256, 256)))
        result = tile_scene(scene)
        assert len(result.patches) == 1
        assert result.index.placements == ((0, 0),)
        assert np.array_equal(result.patches[0].raster.data, scene.data)

    def test_margins_reported(self):
        # 600 rows x 300 cols: 600 - 2*256 = 88 margin rows, 300 - 256 = 44 cols
        scene = stack(RNG.uniform(0, 1, (7, 600, 300)))
        result = tile_scene(scene)
        assert len(result.patches) == 2
        assert result.margin_rows == 88
        assert result.margin_cols == 44

    def test_scene_too_small(self):
        with pytest.raises(DimensionError):
            tile_scene(stack(RNG.uniform(0, 1, (7, 255, 300))))

    def test_wrong_band_count(self):
        with pytest.raises(DimensionError):
            tile_scene(stack(RNG.uniform(0, 1, (3, 512, 512))))

    def test_placements_disjoint_and_aligned(self):
        scene = stack(RNG.uniform(0, 1, (7, 1024, 768)))
        result = tile_scene(scene)
        seen = set()
        for r0, c0 in result.index.placements:
            assert r0 % 256 == 0 and c0 % 256 == 0
            assert (r0, c0) not in seen
            seen.add((r0, c0))
            assert r0 + 256 <= scene.height and c0 + 256 <= scene.width

    def test_patch_georefs_follow_scene_center(self):
        scene = stack(RNG.uniform(0, 1, (7, 512, 512)))
        georef = GeoRef(44.0, 9.0, 4.75, dt.date(2024, 6, 1))
        result = tile_scene(scene, georef)
        lats = [p.georef.center_lat for p in result.patches]
        lons = [p.georef.center_lon for p in result.patches]
        # north-west patch is north (greater lat) and west (smaller lon)
        assert lats[0] > lats[2] and lons[0] < lons[1]
        assert result.patches[0].georef.acquisition_date == georef.acquisition_date


class TestMosaic:
    def test_single_grid_identity(self):
        scene = stack(RNG.uniform(0, 1, (7, 256, 256)))
        result = tile_scene(scene)
        grid = RNG.uniform(0, 1, (25, 25)).astype(np.float32)
        out = mosaic([grid], result.index)
        assert np.array_equal(out.data[0], grid)

    def test_quadrants_land_by_index_arithmetic(self):
        scene = stack(RNG.uniform(0, 1, (7, 512, 512)))
        result = tile_scene(scene)
        grids = [RNG.uniform(0, 1, (25, 25)).astype(np.float32) for _ in range(4)]
        out = mosaic(grids, result.index)
        assert (out.height, out.width) == (50, 50)
        # oracle: recompute each cell's destination from the placement
        for k, (r0, c0) in enumerate(result.index.placements):
            gr, gc = r0 // 256 * 25, c0 // 256 * 25
            assert np.array_equal(out.data[0, gr : gr + 25, gc : gc + 25], grids[k])

    def test_tile_then_mosaic_roundtrip_block_constant(self):
        scene = stack(RNG.uniform(0, 1, (7, 512, 768)))
        result = tile_scene(scene)
        grids = [np.full((25, 25), float(k)) for k in range(len(result.patches))]
        out = mosaic(grids, result.index)
        for k, (r0, c0) in enumerate(result.index.placements):
            gr, gc = r0 // 256 * 25, c0 // 256 * 25
            assert np.all(out.data[0, gr : gr + 25, gc : gc + 25] == k)

    def test_count_mismatch(self):
        scene = stack(RNG.uniform(0, 1, (7, 512, 512)))
        result = tile_scene(scene)
        with pytest.raises(InconsistencyError):
            mosaic([np.zeros((25, 25))] * 3, result.index)

    def test_mosaic_placement_bijection(self):
        # every covered mosaic cell receives exactly one patch cell
        scene = stack(RNG.uniform(0, 1, (7, 768, 512)))
        result = tile_scene(scene)
        grids = [np.full((25, 25), 1.0) for _ in result.patches]
        out = mosaic(grids, result.index)
        assert np.all(out.data == 1.0)


class TestPatchInvariants:
    def test_wrong_size_rejected(self):
        r = stack(RNG.uniform(0, 1, (7, 128, 128)))
        with pytest.raises(DimensionError):
            Patch(r, GeoRef(0, 0, 4.75, dt.date(2024, 1, 1)))

    def test_nonfinite_rejected(self):
        data = RNG.uniform(0, 1, (7, 256, 256))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Patch(stack(data), GeoRef(0, 0, 4.75, dt.date(2024, 1, 1)))

    def test_out_of_range_flagged_not_fatal(self):
        data = RNG.uniform(0, 1, (7, 256, 256))
        data[0, :2, :2] = 1.5
        patch = Patch(stack(data), GeoRef(0, 0, 4.75, dt.date(2024, 1, 1)))
        assert patch.flagged_values == 4

    def test_random_patches_are_valid(self):
        patches = random_patches(2, seed=0)
        assert all(p.flagged_values == 0 for p in patches)
        assert patches[0].raster.band_ids == MS_BAND_IDS


class TestPat1Format:
    def test_f32_roundtrip_with_sidecar(self, tmp_path):
        r = stack(RNG.uniform(0, 1, (7, 64, 48)))
        georef = GeoRef(43.5, 9.25, 4.75, dt.date(2024, 7, 1))
        path = write_pat1(tmp_path / "x.pat1", r, georef=georef,
                          extra={"k": "v"})
        back, sidecar = read_pat1(path)
        assert (back.width, back.height, back.bands) == (48, 64, 7)
        assert back.gsd == pytest.approx(4.75)
        assert np.allclose(back.data, r.data.astype(np.float32))
        assert back.band_ids == MS_BAND_IDS
        assert sidecar_georef(sidecar) == georef
        assert sidecar["extra"] == {"k": "v"}

    def test_u8_mask_roundtrip(self, tmp_path):
        mask = (RNG.uniform(0, 1, (1, 32, 32)) > 0.5).astype(np.uint8)
        r = BandStack.from_array(mask, gsd=4.75, band_ids=("cloud",))
        path = write_pat1(tmp_path / "m.pat1", r)
        back, _ = read_pat1(path)
        assert back.data.dtype == np.uint8
        assert np.array_equal(back.data, mask)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pat1"
        p.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError):
            read_pat1(p)

    def test_truncated_payload(self, tmp_path):
        r = stack(RNG.uniform(0, 1, (1, 8, 8)))
        path = write_pat1(tmp_path / "t.pat1", r)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(FormatError):
            read_pat1(path)


class TestBandStackInvariants:
    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            BandStack(width=4, height=4, bands=2, gsd=1.0,
                      data=np.zeros(31), band_ids=("a", "b"))

    def test_duplicate_band_ids(self):
        with pytest.raises(InconsistencyError):
            BandStack(width=2, height=2, bands=2, gsd=1.0,
                      data=np.zeros(8), band_ids=("a", "a"))

    def test_georef_validation(self):
        with pytest.raises(ValueError):
            GeoRef(95.0, 0.0, 1.0, dt.date(2024, 1, 1))
        with pytest.raises(ValueError):
            GeoRef(0.0, 0.0, -1.0, dt.date(2024, 1, 1))
