"""Batch command-line surface for the monitoring pipeline.

Commands compose through the documented file formats (PAT1 rasters, SMP1
sample stores, MDL1/CNN1 models, JSON-lines alerts) and never mutate their
inputs; every command honors ``--seed`` and exits nonzero on error. See
docs/formats/ for the JSON schemas.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

import numpy as np

from . import alerting, convnet, dataset, mlp, quantbench, raster, sensor
from .errors import CoastwatchError

INVALID_CLOUD_FRACTION = 0.5
PARAM_ALIASES = {
    "turbidity": sensor.TURBIDITY, "turbidity_ntu": sensor.TURBIDITY,
    sensor.TURBIDITY: sensor.TURBIDITY,
    "ph": sensor.PH, sensor.PH: sensor.PH,
}


def _parameter(name: str) -> str:
    try:
        return PARAM_ALIASES[name.lower() if name != "pH" else name]
    except KeyError:
        raise CoastwatchError(f"unknown parameter {name!r}") from None


def _chip_paths(directory: Path, stem: str) -> list[Path]:
    paths = sorted(directory.glob(f"{stem}_*.pat1"))
    if not paths:
        raise CoastwatchError(f"no {stem}_*.pat1 files in {directory}")
    return paths


def _load_patches(directory: Path) -> list[raster.Patch]:
    patches = []
    for path in _chip_paths(directory, "chip"):
        stack, sidecar = raster.read_pat1(path)
        georef = raster.sidecar_georef(sidecar)
        if georef is None:
            raise CoastwatchError(f"{path}: chip sidecar lacks a georef")
        patches.append(raster.Patch(stack, georef, patch_id=path.stem))
    return patches


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec_doc = json.loads(Path(args.spec).read_text())
    spec = sensor.SceneSpec.from_json(spec_doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene, truth = sensor.generate_synthetic_scene(spec, args.seed)
    georef = spec.georef()
    raster.write_pat1(out / "scene.pat1", scene, georef=georef)

    ctx = sensor.SolarContext(
        solar_zenith=float(spec_doc.get("solar", {}).get("zenith", 0.0)),
        earth_sun_distance=float(spec_doc.get("solar", {}).get("distance_au", 1.0)),
    )
    cfg = sensor.DegradeConfig.from_json(spec_doc.get("degrade", {}))
    product = sensor.simulate_l1c(
        scene, ctx, cfg, seed=args.seed + 1, scene_georef=georef,
        min_coverage=spec_doc.get("min_coverage"),
    )

    chips_dir = out / "chips"
    chips_dir.mkdir(exist_ok=True)
    gt_aligned = spec.gsd == raster.PRODUCT_GSD
    for patch, placement, cloud_frac in zip(
        product.patches, product.tiles.index.placements,
        product.cloud_window_fraction,
    ):
        extra = {
            "patch_id": patch.patch_id,
            "placement": list(placement),
            "cloud_window_fraction_max": float(cloud_frac.max()),
            "flagged_values": patch.flagged_values,
        }
        raster.write_pat1(chips_dir / f"{patch.patch_id}.pat1", patch.raster,
                          georef=patch.georef, extra=extra)
        if gt_aligned:
            r0, c0 = placement
            ps = product.tiles.index.patch_size
            grids = []
            for name in sensor.PARAMETERS:
                field = truth.fields[name][r0 : r0 + ps, c0 : c0 + ps]
                grids.append(truth.window_grid_for(field))
            gt = raster.BandStack.from_array(
                np.stack(grids), gsd=spec.gsd * raster.WINDOW,
                band_ids=tuple(sensor.PARAMETERS),
            )
            raster.write_pat1(chips_dir / f"gt_{patch.patch_id[5:]}.pat1", gt,
                              georef=patch.georef)

    manifest = {
        "scene": "scene.pat1",
        "chips": len(product.patches),
        "margins": [product.tiles.margin_rows, product.tiles.margin_cols],
        "gt_aligned": gt_aligned,
        "noise_std": truth.noise_std,
        "noise_floor": truth.noise_floor,
        "mixing_offsets": truth.mixing_offsets.tolist(),
        "mixing_matrix": truth.mixing_matrix.tolist(),
        "seed": args.seed,
    }
    (out / "truth.json").write_text(json.dumps(manifest, indent=2))
    print(f"simulate: {len(product.patches)} chips -> {chips_dir} "
          f"(margins {product.tiles.margin_rows}x{product.tiles.margin_cols} px)")
    return 0


def cmd_build_dataset(args) -> int:
    ingest = dataset.ingest_records(args.records)
    surface = dataset.select_surface(ingest.records)
    patches = _load_patches(Path(args.patches))
    result = dataset.match(surface, patches, tolerance_days=args.tolerance_days)
    if not result.samples:
        raise CoastwatchError("no record matched any patch")
    dataset.save_samples(
        args.out, result.samples,
        provenance={
            "records": str(args.records),
            "patches": str(args.patches),
            "tolerance_days": args.tolerance_days,
            "rejected_rows": len(ingest.rejected),
            "duplicates_removed": ingest.duplicates_removed,
            "unmatched_records": len(result.unmatched),
        },
    )
    print(f"build-dataset: {len(result.samples)} samples "
          f"({len(result.unmatched)} unmatched, {len(ingest.rejected)} rejected "
          f"rows, {ingest.duplicates_removed} duplicates) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    samples, _, _ = dataset.load_samples(args.samples)
    parameter = _parameter(args.parameter)
    samples = [s for s in samples if s.parameter == parameter]
    if not samples:
        raise CoastwatchError(f"no {parameter} samples in {args.samples}")
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    config = mlp.TrainConfig.from_json(doc)

    splits = dataset.split(samples, dataset.SplitSpec(seed=config.seed))
    train_n, stats = dataset.normalize(splits.train)
    val_n, _ = dataset.normalize(splits.val, stats)
    test_n, _ = dataset.normalize(splits.test, stats)
    params, history = mlp.train(train_n, config, val_n)
    val_report = mlp.evaluate(params, val_n, stats, split="val")
    test_report = mlp.evaluate(params, test_n, stats, split="test")

    training_meta = {
        "samples": str(args.samples),
        "n_train": len(train_n), "n_test": len(test_n), "n_val": len(val_n),
        "epochs_run": history["epochs_run"],
        "stopped_early": history["stopped_early"],
        "val_rmse": val_report.rmse, "val_mae": val_report.mae,
        "test_rmse": test_report.rmse, "test_mae": test_report.mae,
        "seed": config.seed,
    }
    mlp.save_mdl1(args.out, params, stats, parameter, training_meta)
    Path(args.out).with_suffix(".history.json").write_text(
        json.dumps(history, indent=2)
    )
    print(f"train: {parameter} {history['epochs_run']} epochs, "
          f"val RMSE {val_report.rmse:.4f} MAE {val_report.mae:.4f}, "
          f"test RMSE {test_report.rmse:.4f} MAE {test_report.mae:.4f} -> {args.out}")
    return 0


def cmd_transfer(args) -> int:
    params, stats, manifest = mlp.load_mdl1(args.model)
    net = convnet.fc_to_cnn(params, stats, manifest["parameter"])
    patches = raster.random_patches(args.check_patches, seed=args.seed)
    report = convnet.verify_equivalence(params, stats, net, patches, tol=args.tol)
    if not report.passed:
        raise CoastwatchError(
            f"transfer equivalence failed: max deviation "
            f"{report.max_abs_deviation:.3e} > tol {report.tol:.1e} at "
            f"patch {report.worst[0]} cell {report.worst[1:]}; refusing to emit"
        )
    convnet.save_cnn1(args.out, net, report)
    print(f"transfer: equivalence max {report.max_abs_deviation:.3e} over "
          f"{report.n_patches} patches -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    net, _ = convnet.load_cnn1(args.net)
    scene, sidecar = raster.read_pat1(args.scene)
    georef = raster.sidecar_georef(sidecar)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_id = Path(args.scene).stem

    tiles = raster.tile_scene(scene, georef, patch_id_prefix=scene_id)
    masks = None
    if args.masks:
        masks = _load_mask_scene(Path(args.masks), scene)

    grids = []
    for patch, placement in zip(tiles.patches, tiles.index.placements):
        cmap = convnet.infer_patch(net, patch)
        if masks is not None:
            r0, c0 = placement
            ps = tiles.index.patch_size
            frac = raster.window_fraction(
                masks.cloud[r0 : r0 + ps, c0 : c0 + ps], raster.WINDOW
            )
            cmap.values = np.where(
                frac >= args.cloud_fraction, np.nan, cmap.values
            )
        grids.append(cmap.values.astype(np.float32))
        raster.write_pat1(
            out / f"map_{patch.patch_id}.pat1",
            raster.BandStack.from_array(
                cmap.values.astype(np.float32)[None],
                gsd=cmap.window_gsd, band_ids=(net.parameter,),
            ),
            georef=raster.GeoRef(cmap.georef.center_lat, cmap.georef.center_lon,
                                 cmap.window_gsd, cmap.georef.acquisition_date),
            extra={"patch_id": patch.patch_id, "placement": list(placement)},
        )
    mosaic = raster.mosaic(grids, tiles.index, band_ids=(net.parameter,))
    raster.write_pat1(out / "mosaic.pat1", mosaic, georef=georef)
    index_doc = {
        "scene_id": scene_id,
        "parameter": net.parameter,
        "scene_width": tiles.index.scene_width,
        "scene_height": tiles.index.scene_height,
        "patch_size": tiles.index.patch_size,
        "gsd": tiles.index.gsd,
        "placements": [list(p) for p in tiles.index.placements],
        "maps": [f"map_{p.patch_id}.pat1" for p in tiles.patches],
    }
    (out / "index.json").write_text(json.dumps(index_doc, indent=2))
    print(f"infer: {len(tiles.patches)} maps + mosaic "
          f"{mosaic.height}x{mosaic.width} -> {out}")
    return 0


def _load_mask_scene(path: Path, scene: raster.BandStack) -> sensor.MaskSet:
    stack, _ = raster.read_pat1(path)
    if (stack.height, stack.width) != (scene.height, scene.width):
        raise CoastwatchError("mask raster does not match the scene dimensions")
    planes = stack.data.astype(bool)
    if stack.bands == 1:
        return sensor.MaskSet(planes[0], np.zeros_like(planes[0]),
                              np.zeros_like(planes[0]))
    if stack.bands == 3:
        return sensor.MaskSet(planes[0], planes[1], planes[2])
    raise CoastwatchError("mask raster must have 1 (cloud) or 3 bands")


def cmd_alert(args) -> int:
    maps_dir = Path(args.maps)
    index_doc = json.loads((maps_dir / "index.json").read_text())
    policy = alerting.ThresholdPolicy.load(args.policy)
    if policy.parameter != index_doc["parameter"]:
        raise CoastwatchError(
            f"maps are {index_doc['parameter']!r}, policy is "
            f"{policy.parameter!r}"
        )
    index = raster.TileIndex(
        scene_width=index_doc["scene_width"],
        scene_height=index_doc["scene_height"],
        placements=tuple(tuple(p) for p in index_doc["placements"]),
        patch_size=index_doc["patch_size"],
        gsd=index_doc["gsd"],
    )
    timestamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    messages, cells = [], []
    for name in index_doc["maps"]:
        stack, sidecar = raster.read_pat1(maps_dir / name)
        georef = raster.sidecar_georef(sidecar)
        cmap = convnet.ContaminantMap(
            values=stack.data[0].astype(np.float64),
            parameter=index_doc["parameter"],
            georef=raster.GeoRef(georef.center_lat, georef.center_lon,
                                 index.gsd, georef.acquisition_date),
            window_gsd=stack.gsd,
        )
        amap = alerting.threshold(cmap, policy)
        cells.append(amap.cells)
        msg = alerting.make_message(index_doc["scene_id"], cmap, amap, policy,
                                    timestamp)
        if msg is not None:
            messages.append(msg)

    with open(args.out, "wb") as fh:
        for msg in messages:
            fh.write(alerting.serialize_alert(msg) + b"\n")
    if args.mosaic:
        mosaic = raster.mosaic(cells, index, band_ids=(policy.policy_id,))
        raster.write_pat1(args.mosaic, mosaic)
    print(f"alert: {len(messages)} messages ({sum(int(c.sum()) for c in cells)} "
          f"alerting cells) -> {args.out}")
    return 0


def cmd_quantize(args) -> int:
    net, _ = convnet.load_cnn1(args.net)
    net16 = quantbench.quantize_fp16(net)
    patches = raster.random_patches(args.check_patches, seed=args.seed)
    report = quantbench.compare_quantized(net, net16, patches,
                                          threshold=args.threshold)
    convnet.save_cnn1(args.out, net16)
    if args.report:
        quantbench.write_report(args.report, report)
    status = "ok" if report.passed else "DEVIATION ABOVE THRESHOLD"
    print(f"quantize: {report.model_bytes_fp32} -> {report.model_bytes_fp16} "
          f"bytes, max map deviation {report.max_map_deviation:.3e} ({status}) "
          f"-> {args.out}")
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    net, _ = convnet.load_cnn1(args.net)
    if args.patches:
        patches = _load_patches(Path(args.patches))
    else:
        patches = raster.random_patches(4, seed=args.seed)
    report = quantbench.bench(net, patches, warmup=args.warmup, reps=args.reps)
    if args.report:
        quantbench.write_report(args.report, report)
    print(f"bench: median {report.ms_per_inference:.1f} ms/inference "
          f"(p95 {report.ms_p95:.1f} ms, {report.fps:.1f} FPS) on "
          f"{report.hardware_descriptor}; mission reference "
          f"{report.reference['ms_per_inference']} ms / {report.reference['fps']} FPS")
    return 0


def cmd_plot(args) -> int:
    stack, _ = raster.read_pat1(args.map)
    plane = stack.data[args.band].astype(np.float64)
    if stack.data.dtype == np.uint8:
        img = np.where(plane > 0, 255, 0).astype(np.uint8)
    else:
        finite = np.isfinite(plane)
        lo = plane[finite].min() if finite.any() else 0.0
        hi = plane[finite].max() if finite.any() else 0.0
        span = hi - lo
        scaled = (plane - lo) / span * 255.0 if span > 0 else np.zeros_like(plane)
        img = np.where(finite, scaled, 0.0).round().astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(args.out).write_bytes(header + img.tobytes())
    print(f"plot: {img.shape[1]}x{img.shape[0]} PGM -> {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coastwatch",
        description="Coastal water-contaminant monitoring pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic scene + simulated product chips")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("build-dataset", help="match in-situ records to chips")
    p.add_argument("--records", required=True, help="in-situ CSV")
    p.add_argument("--patches", required=True, help="chip directory")
    p.add_argument("--tolerance-days", type=int, default=3)
    p.add_argument("--out", required=True, help="output SMP1 sample store")
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("train", help="train the regression network")
    p.add_argument("--samples", required=True, help="SMP1 sample store")
    p.add_argument("--parameter", required=True, help="ph or turbidity")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--out", required=True, help="output MDL1 model")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transfer", help="convert MDL1 into a deployed CNN1")
    p.add_argument("--model", required=True, help="MDL1 model")
    p.add_argument("--out", required=True, help="output CNN1 network")
    p.add_argument("--check-patches", type=int, default=20,
                   help="random patches for the equivalence check")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("infer", help="dense maps for a scene")
    p.add_argument("--net", required=True, help="CNN1 network")
    p.add_argument("--scene", required=True, help="scene PAT1")
    p.add_argument("--out", required=True, help="output map directory")
    p.add_argument("--masks", help="optional mask PAT1 (u8; 1 or 3 bands)")
    p.add_argument("--cloud-fraction", type=float, default=INVALID_CLOUD_FRACTION)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("alert", help="threshold maps into alert messages")
    p.add_argument("--maps", required=True, help="map directory from infer")
    p.add_argument("--policy", required=True, help="policy JSON")
    p.add_argument("--out", required=True, help="output JSON-lines alerts")
    p.add_argument("--mosaic", help="output u8 mosaic PAT1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_alert)

    p = sub.add_parser("quantize", help="fp16-quantize a CNN1 network")
    p.add_argument("--net", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="output QuantReport JSON")
    p.add_argument("--check-patches", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("bench", help="inference latency benchmark")
    p.add_argument("--net", required=True)
    p.add_argument("--patches", help="chip directory (random patches if omitted)")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--report", help="output BenchReport JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("plot", help="render a map PAT1 as a grayscale PGM")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CoastwatchError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
