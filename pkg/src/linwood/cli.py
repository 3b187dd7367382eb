"""Command-line pipeline tying every stage together.

One executable exposes the stages as subcommands (``synthgen``,
``maskproc``, ``separate``, ``postprocess``, ``evaluate``), a config-driven
``run`` that executes several stages in order, and ``demo`` presets that
reproduce the end-to-end experiments.  Every stage emits one log record
(JSON line with ``--log-json``); all randomness descends from a single
seed through stable per-stage hashing, so reruns of the same config
produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2

DEFAULT_SEED = 1234

_STAGE_NAMES = (
    "synthgen",
    "maskproc",
    "maskproc-chm",
    "separate",
    "separate-scenes",
    "postprocess",
    "evaluate",
    "evaluate-scenes",
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "stages"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "stages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["stage", "params"],
                "additionalProperties": False,
                "properties": {
                    "stage": {"enum": list(_STAGE_NAMES)},
                    "params": {"type": "object"},
                },
            },
        },
    },
}


def child_seed(seed: int, index: int, stage: str) -> int:
    """Stable per-stage seed: sha256 of ``seed:index:stage``, 8 bytes."""
    digest = hashlib.sha256(f"{seed}:{index}:{stage}".encode("ascii")).hexdigest()
    return int(digest[:16], 16)


class StageContext:
    """Seed, worker count, and log sink handed to each stage."""

    def __init__(self, seed: int, workers: int, log):
        self.seed = seed
        self.workers = workers
        self.log = log


# ---------------------------------------------------------------------------
# stages


def _stage_synthgen(params: dict, ctx: StageContext) -> dict:
    from linwood.synth import generate_dataset

    config = dict(params.get("config", {}))
    config.setdefault("master_seed", ctx.seed)
    n = int(params["n_scenes"])
    out = str(params["out"])
    manifest = generate_dataset(config, n, out, workers=ctx.workers)
    return {
        "manifest": os.path.join(out, "manifest.json"),
        "n_scenes": manifest["n"],
    }


def _leaf_off_decision():
    from linwood.maskproc import ThresholdDecision

    return ThresholdDecision(
        kind="none", threshold=None, sample_pass="height-masked"
    )


def _stage_maskproc(params: dict, ctx: StageContext) -> dict:
    from linwood import maskproc
    from linwood.raster import read_raster, resample_mean, write_raster

    dsm = read_raster(params["dsm"])
    dtm = read_raster(params["dtm"])
    red = read_raster(params["dop_red"])
    nir = read_raster(params["dop_nir"])
    buildings = read_raster(params["buildings"])
    with open(str(params["meta"]), "r", encoding="ascii") as f:
        meta = maskproc.TileMeta.from_json(f.read())
    out = str(params["out"])
    height_threshold = float(params.get("height_threshold", maskproc.DEFAULT_HEIGHT_THRESHOLD))

    hm = maskproc.height_mask(maskproc.ndsm(dsm, dtm), height_threshold)
    nd = maskproc.ndvi(red, nir)
    if nd.pixel_size != hm.pixel_size:
        nd = resample_mean(nd, hm.pixel_size)
    usable = maskproc.leaf_on(meta)
    if usable:
        decision = maskproc.detect_threshold(nd, hm)
    else:
        decision = _leaf_off_decision()
    woody = maskproc.build_woody_mask(
        hm, buildings, decision, nd if decision.kind != "none" else None
    )
    write_raster(woody, out)
    log_doc = decision.to_json_dict()
    if not usable:
        log_doc["pass"] = None  # the threshold search never ran
    log_doc["leaf_on"] = usable
    decision_path = out + ".decision.json"
    with open(decision_path, "w", encoding="ascii") as f:
        json.dump(log_doc, f, sort_keys=True)
        f.write("\n")
    return {"mask": out, "decision": log_doc, "decision_file": decision_path}


def _stage_maskproc_chm(params: dict, ctx: StageContext) -> dict:
    from linwood.maskproc import chm_mask
    from linwood.raster import read_raster, write_raster

    chm = read_raster(params["chm"])
    threshold = float(params["threshold"])
    out = str(params["out"])
    write_raster(chm_mask(chm, threshold), out)
    return {"mask": out, "threshold": threshold}


def _stage_separate(params: dict, ctx: StageContext) -> dict:
    from linwood.raster import open_mosaic, write_geojson, write_raster
    from linwood.separator import parse_separator_spec
    from linwood.tiling import DEFAULT_CHIP_SIZE, run, vectorize

    sep = parse_separator_spec(str(params.get("separator", "baseline")))
    chip = int(params.get("chip", DEFAULT_CHIP_SIZE))
    refine = bool(params.get("refine_skeleton", False))
    out = str(params["out"])
    os.makedirs(out, exist_ok=True)
    mosaic = open_mosaic(str(params["input"]))
    cls = run(sep, mosaic, chip_size=chip, workers=ctx.workers, refine=refine)
    raster_path = os.path.join(out, "classes.pgm")
    write_raster(cls, raster_path)
    polys = vectorize(cls)
    geojson_path = os.path.join(out, "features.geojson")
    write_geojson(polys, geojson_path)
    return {
        "class_raster": raster_path,
        "features": geojson_path,
        "n_features": len(polys.features),
        "chip_size": chip,
    }


def _stage_separate_scenes(params: dict, ctx: StageContext) -> dict:
    from linwood.raster import read_raster, write_raster
    from linwood.separator import parse_separator_spec
    from linwood.tiling import run

    with open(str(params["manifest"]), "r", encoding="ascii") as f:
        manifest = json.load(f)
    scene_dir = os.path.dirname(os.path.abspath(str(params["manifest"])))
    sep = parse_separator_spec(str(params.get("separator", "baseline")))
    chip = int(params.get("chip", 256))
    refine = bool(params.get("refine_skeleton", False))
    out = str(params["out"])
    os.makedirs(out, exist_ok=True)
    outputs = []
    for i, entry in enumerate(manifest["scenes"]):
        mask = read_raster(os.path.join(scene_dir, entry["input"]))
        cls = run(sep, mask, chip_size=chip, workers=ctx.workers, refine=refine)
        path = os.path.join(out, f"scene_{i:05d}.cls.pgm")
        write_raster(cls, path)
        outputs.append(path)
    return {"n_scenes": len(outputs), "out_dir": out}


def _overlay(paths):
    from linwood.raster import PolygonSet, read_geojson

    if not paths:
        return None
    merged = []
    epsg = 0
    for p in paths:
        layer = read_geojson(str(p))
        merged.extend(layer.features)
        epsg = epsg or layer.epsg
    return PolygonSet(features=merged, epsg=epsg)


def _stage_postprocess(params: dict, ctx: StageContext) -> dict:
    from linwood.raster import read_geojson, write_geojson
    from linwood.tiling import DEFAULT_MIN_AREA, postprocess

    polys = read_geojson(str(params["input"]))
    erase = _overlay(params.get("erase", []))
    boundary = _overlay([params["boundary"]] if params.get("boundary") else [])
    min_area = float(params.get("min_area", DEFAULT_MIN_AREA))
    out = str(params["out"])
    result = postprocess(polys, min_area=min_area, erase=erase, boundary=boundary)
    write_geojson(result, out)
    return {
        "features": out,
        "n_in": len(polys.features),
        "n_out": len(result.features),
        "min_area": min_area,
    }


def _snap_down(v: float, step: float) -> float:
    return math.floor(v / step) * step


def _eval_grid_from_bounds(layers, grid_size: float):
    from linwood.raster import RasterGrid

    xs, ys = [], []
    for layer in layers:
        for feat in layer.features:
            for ring in feat.rings():
                for x, y in ring:
                    xs.append(x)
                    ys.append(y)
    if not xs:
        raise ValueError("vector inputs contain no geometry to grid")
    minx = _snap_down(min(xs), grid_size)
    maxy = -_snap_down(-max(ys), grid_size)
    w = max(1, int(math.ceil((max(xs) - minx) / grid_size)))
    h = max(1, int(math.ceil((maxy - min(ys)) / grid_size)))
    epsg = next((l.epsg for l in layers if l.epsg), 0)
    return RasterGrid(np.zeros((h, w), np.uint8), minx, maxy, grid_size, epsg, "mask8")


def _is_vector(path: str) -> bool:
    return str(path).endswith((".geojson", ".json"))


def _load_eval_pair(gt_path, pred_path, grid_size: float):
    """Two aligned binary grids from raster and/or vector inputs."""
    from linwood.raster import rasterize, read_geojson, read_raster

    inputs = []
    for path in (gt_path, pred_path):
        if _is_vector(path):
            inputs.append(("vector", read_geojson(str(path))))
        else:
            inputs.append(("raster", read_raster(str(path))))
    rasters = [v for k, v in inputs if k == "raster"]
    if rasters:
        template = rasters[0]
    else:
        template = _eval_grid_from_bounds([v for _, v in inputs], grid_size)
    out = []
    for kind, value in inputs:
        if kind == "vector":
            out.append(rasterize(value, template))
        else:
            binary = (value.data > 0).astype(np.uint8)
            out.append(value.with_data(binary, band="mask8"))
    return out[0], out[1]


def _stage_evaluate(params: dict, ctx: StageContext) -> dict:
    from linwood.metrics import DEFAULT_TAU_MAX, report, write_report

    grid_size = float(params.get("grid", 1.0))
    tau_max = int(params.get("tau_max", DEFAULT_TAU_MAX))
    gt, pred = _load_eval_pair(params["gt"], params["pred"], grid_size)
    site = str(params.get("site", "site"))
    product = str(params.get("product", "product"))
    rep = report(
        [(site, product, gt, pred)],
        tau_max=tau_max,
        plot_dir=params.get("plots"),
    )
    out = str(params["out"])
    write_report(rep, out)
    entry = rep.entries[0]
    return {
        "report": out,
        "pixel_f1": entry.pixel["f1"],
        "skeleton_auc_f1": entry.skeleton.auc_f1,
    }


def _stage_evaluate_scenes(params: dict, ctx: StageContext) -> dict:
    from linwood.metrics import DEFAULT_TAU_MAX, report, write_report
    from linwood.raster import read_raster

    with open(str(params["manifest"]), "r", encoding="ascii") as f:
        manifest = json.load(f)
    scene_dir = os.path.dirname(os.path.abspath(str(params["manifest"])))
    pred_dir = str(params["pred_dir"])
    tau_max = int(params.get("tau_max", DEFAULT_TAU_MAX))
    rows = []
    for i, entry in enumerate(manifest["scenes"]):
        label = read_raster(os.path.join(scene_dir, entry["label"]))
        pred = read_raster(os.path.join(pred_dir, f"scene_{i:05d}.cls.pgm"))
        gt_linear = label.with_data((label.data == 1).astype(np.uint8), "mask8")
        pred_linear = pred.with_data((pred.data == 1).astype(np.uint8), "mask8")
        rows.append((f"scene-{i:05d}", "separator", gt_linear, pred_linear))
    rep = report(rows, tau_max=tau_max, plot_dir=params.get("plots"))
    out = str(params["out"])
    write_report(rep, out)
    mean_auc = sum(e.skeleton.auc_f1 for e in rep.entries) / len(rep.entries)
    return {"report": out, "n_sites": len(rep.entries), "mean_auc_f1_logged": mean_auc}


_STAGES = {
    "synthgen": _stage_synthgen,
    "maskproc": _stage_maskproc,
    "maskproc-chm": _stage_maskproc_chm,
    "separate": _stage_separate,
    "separate-scenes": _stage_separate_scenes,
    "postprocess": _stage_postprocess,
    "evaluate": _stage_evaluate,
    "evaluate-scenes": _stage_evaluate_scenes,
}


# ---------------------------------------------------------------------------
# pipeline driver


def _emit(record: dict, log_json: bool, stream=None) -> None:
    stream = stream if stream is not None else sys.stdout
    if log_json:
        print(json.dumps(record, sort_keys=True), file=stream)
    else:
        stage = record.get("stage", "?")
        status = record.get("status", "?")
        dur = record.get("duration_s")
        extra = {
            k: v
            for k, v in record.items()
            if k not in ("stage", "status", "duration_s", "inputs", "outputs")
        }
        line = f"[{stage}] {status}"
        if dur is not None:
            line += f" in {dur:.2f}s"
        if record.get("outputs"):
            line += f" -> {record['outputs']}"
        if extra:
            line += f" {extra}"
        print(line, file=stream)


def validate_config(config: dict) -> list:
    """Schema violations of a pipeline config (empty when valid)."""
    import jsonschema

    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    return [e.message for e in validator.iter_errors(config)]


def run_pipeline(config: dict, log_json: bool = False) -> int:
    """Execute the configured stages in order; exit status semantics.

    Returns 2 on a config schema violation, 1 when a stage fails (the log
    names the stage and, for chip failures, the chip id in the message),
    0 on success.
    """
    errors = validate_config(config if isinstance(config, dict) else {})
    if not isinstance(config, dict) or errors:
        for msg in errors or ["config must be a JSON object"]:
            _emit(
                {"stage": "config", "status": "invalid", "error": msg},
                log_json,
                sys.stderr,
            )
        return EXIT_CONFIG_ERROR
    seed = int(config["seed"])
    workers = int(config.get("workers", 1))
    for index, stage_doc in enumerate(config["stages"]):
        name = stage_doc["stage"]
        ctx = StageContext(child_seed(seed, index, name), workers, None)
        started = time.monotonic()
        try:
            outputs = _STAGES[name](stage_doc["params"], ctx)
        except Exception as exc:
            _emit(
                {
                    "stage": name,
                    "status": "failed",
                    "duration_s": time.monotonic() - started,
                    "error": str(exc),
                },
                log_json,
                sys.stderr,
            )
            return EXIT_STAGE_FAILURE
        _emit(
            {
                "stage": name,
                "status": "ok",
                "duration_s": time.monotonic() - started,
                "inputs": stage_doc["params"],
                "outputs": outputs,
            },
            log_json,
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo presets


def demo_config(preset: str, out_dir: str, seed: int, workers: int) -> dict:
    """Pipeline config of a named demo preset."""
    if preset == "synthetic-eval":
        scenes = os.path.join(out_dir, "scenes")
        classes = os.path.join(out_dir, "classes")
        return {
            "seed": seed,
            "workers": workers,
            "stages": [
                {
                    "stage": "synthgen",
                    "params": {
                        "config": {"occlusion_free": True},
                        "n_scenes": 50,
                        "out": scenes,
                    },
                },
                {
                    "stage": "separate-scenes",
                    "params": {
                        "manifest": os.path.join(scenes, "manifest.json"),
                        "separator": "baseline",
                        "chip": 256,
                        "out": classes,
                    },
                },
                {
                    "stage": "evaluate-scenes",
                    "params": {
                        "manifest": os.path.join(scenes, "manifest.json"),
                        "pred_dir": classes,
                        "out": os.path.join(out_dir, "report.json"),
                    },
                },
            ],
        }
    raise ValueError(f"unknown demo preset {preset!r}; available: synthetic-eval")


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linwood",
        description="Map linear woody features: synthesis, masking, "
        "separation, vectorization, evaluation.",
    )
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument(
        "--log-json", action="store_true", help="emit one JSON log line per stage"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", help="generate a synthetic scene dataset")
    p.add_argument("--config", help="template config JSON file")
    p.add_argument("--n-scenes", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("maskproc", help="build the woody vegetation mask")
    mp_modes = p.add_subparsers(dest="maskproc_mode")
    chm = mp_modes.add_parser("chm", help="threshold a canopy height model")
    chm.add_argument("--chm", required=True)
    chm.add_argument("--threshold", type=float, required=True)
    chm.add_argument("--out", required=True)
    p.add_argument("--dsm")
    p.add_argument("--dtm")
    p.add_argument("--dop-red")
    p.add_argument("--dop-nir")
    p.add_argument("--buildings")
    p.add_argument("--meta")
    p.add_argument("--out")
    p.add_argument("--height-threshold", type=float, default=2.0)

    p = sub.add_parser("separate", help="stitched linear/non-linear separation")
    p.add_argument("--input-catalog", required=True)
    p.add_argument("--separator", default="baseline")
    p.add_argument("--chip", type=int, default=1024)
    p.add_argument("--refine-skeleton", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("postprocess", help="filter vectorized features")
    p.add_argument("input", help="features GeoJSON")
    p.add_argument("--min-area", type=float, default=250.0)
    p.add_argument("--erase", nargs="*", default=[])
    p.add_argument("--boundary")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="pixel and skeleton-tolerance metrics")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--grid", type=float, default=1.0)
    p.add_argument("--tau-max", type=int, default=12)
    p.add_argument("--out", required=True)
    p.add_argument("--plots")
    p.add_argument("--site", default="site")
    p.add_argument("--product", default="product")

    p = sub.add_parser("demo", help="run a preset end-to-end experiment")
    p.add_argument("preset", choices=["synthetic-eval"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="execute a pipeline config")
    p.add_argument("--config", required=True)

    return parser


def _single_stage(name: str, params: dict, args) -> int:
    config = {
        "seed": args.seed,
        "workers": args.workers,
        "stages": [{"stage": name, "params": params}],
    }
    return run_pipeline(config, log_json=args.log_json)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "synthgen":
        config = {}
        if args.config:
            with open(args.config, "r", encoding="ascii") as f:
                config = json.load(f)
        return _single_stage(
            "synthgen",
            {"config": config, "n_scenes": args.n_scenes, "out": args.out},
            args,
        )

    if args.command == "maskproc":
        if args.maskproc_mode == "chm":
            return _single_stage(
                "maskproc-chm",
                {"chm": args.chm, "threshold": args.threshold, "out": args.out},
                args,
            )
        required = ("dsm", "dtm", "dop_red", "dop_nir", "buildings", "meta", "out")
        missing = [k for k in required if getattr(args, k) is None]
        if missing:
            flags = ", ".join("--" + k.replace("_", "-") for k in missing)
            print(f"maskproc: missing required flags: {flags}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        return _single_stage(
            "maskproc",
            {
                "dsm": args.dsm,
                "dtm": args.dtm,
                "dop_red": args.dop_red,
                "dop_nir": args.dop_nir,
                "buildings": args.buildings,
                "meta": args.meta,
                "out": args.out,
                "height_threshold": args.height_threshold,
            },
            args,
        )

    if args.command == "separate":
        return _single_stage(
            "separate",
            {
                "input": args.input_catalog,
                "separator": args.separator,
                "chip": args.chip,
                "refine_skeleton": args.refine_skeleton,
                "out": args.out,
            },
            args,
        )

    if args.command == "postprocess":
        return _single_stage(
            "postprocess",
            {
                "input": args.input,
                "min_area": args.min_area,
                "erase": args.erase,
                "boundary": args.boundary,
                "out": args.out,
            },
            args,
        )

    if args.command == "evaluate":
        return _single_stage(
            "evaluate",
            {
                "gt": args.gt,
                "pred": args.pred,
                "grid": args.grid,
                "tau_max": args.tau_max,
                "out": args.out,
                "plots": args.plots,
                "site": args.site,
                "product": args.product,
            },
            args,
        )

    if args.command == "demo":
        os.makedirs(args.out, exist_ok=True)
        try:
            config = demo_config(args.preset, args.out, args.seed, args.workers)
        except ValueError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_CONFIG_ERROR
        config_path = os.path.join(args.out, "config.json")
        with open(config_path, "w", encoding="ascii") as f:
            json.dump(config, f, sort_keys=True, indent=2)
            f.write("\n")
        return run_pipeline(config, log_json=args.log_json)

    if args.command == "run":
        try:
            with open(args.config, "r", encoding="ascii") as f:
                config = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        return run_pipeline(config, log_json=args.log_json)

    raise AssertionError(f"unhandled command {args.command!r}")  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
