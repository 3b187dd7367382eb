"""Dataset generation: deterministic scene batches plus a JSON manifest.

Per-scene randomness comes from a counter-based generator (Philox) seeded
through ``SeedSequence(master_seed, spawn_key=(index,))``, so scene *i* is
bit-reproducible in isolation — no need to generate scenes ``0..i-1`` first
— and parallel generation cannot change any scene's content.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from linwood.morphology import distance_transform, skeletonize
from linwood.raster import write_raster
from linwood.synth.scene import Scene, compose_scene, plan_elements
from linwood.synth.templates import (
    DEFAULT_MIX,
    SceneTemplate,
    get_template,
    scale_template,
    template_from_dict,
)

__all__ = [
    "scene_seed",
    "resolve_templates",
    "generate_dataset",
    "reconstruct_scene",
    "audit_scene",
    "audit_elements",
]


def scene_seed(master_seed: int, index: int) -> int:
    """Derive the 64-bit seed of scene ``index`` from the master seed."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def resolve_templates(config: dict) -> list[SceneTemplate]:
    """Materialize the template list of a dataset config.

    ``templates`` entries are library names or inline template dicts; an
    optional ``canvas`` rescales every template to that size.
    """
    raw = config.get("templates") or list(DEFAULT_MIX)
    templates = []
    for item in raw:
        t = get_template(item) if isinstance(item, str) else template_from_dict(item)
        templates.append(t)
    canvas = config.get("canvas")
    if canvas:
        templates = [
            t if t.canvas_size == canvas else scale_template(t, int(canvas))
            for t in templates
        ]
    for t in templates:
        t.validate()
    return templates


def _scene_paths(index: int, nn_channels: bool) -> dict:
    stem = f"scene_{index:05d}"
    entry = {"input": f"{stem}.input.pgm", "label": f"{stem}.label.pgm"}
    if nn_channels:
        entry["input_c1"] = f"{stem}.c1.pgm"
        entry["input_c2"] = f"{stem}.c2.f32"
        entry["skeleton_label"] = f"{stem}.skel.pgm"
    return entry


def _generate_one(args) -> dict:
    index, template, seed, out_dir, occlusion_free, separation, nn_channels = args
    scene = compose_scene(
        template, seed, occlusion_free=occlusion_free, separation=separation
    )
    paths = _scene_paths(index, nn_channels)
    write_raster(scene.input, os.path.join(out_dir, paths["input"]))
    write_raster(scene.label, os.path.join(out_dir, paths["label"]))
    if nn_channels:
        skel = skeletonize(scene.input)
        write_raster(skel, os.path.join(out_dir, paths["input_c1"]))
        dist = distance_transform(scene.input)
        write_raster(dist, os.path.join(out_dir, paths["input_c2"]))
        skel_label = skeletonize(
            scene.label.with_data(
                (scene.label.data == 1).astype(np.uint8), band="mask8"
            )
        )
        write_raster(skel_label, os.path.join(out_dir, paths["skeleton_label"]))
    entry = {"seed": seed, "template": template.name}
    entry.update(paths)
    return entry


def generate_dataset(config: dict, n: int, out_dir, workers: int = 1) -> dict:
    """Generate ``n`` scenes and write them plus ``manifest.json``.

    Identical configs produce byte-identical files and manifests, with any
    worker count.  Returns the manifest document.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    templates = resolve_templates(config)
    master_seed = int(config.get("master_seed", 0))
    occlusion_free = bool(config.get("occlusion_free", False))
    separation = float(config.get("separation", 3.0))
    nn_channels = bool(config.get("nn_channels", False))
    jobs = [
        (
            i,
            templates[i % len(templates)],
            scene_seed(master_seed, i),
            out_dir,
            occlusion_free,
            separation,
            nn_channels,
        )
        for i in range(n)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_generate_one, jobs, chunksize=4))
    else:
        entries = [_generate_one(job) for job in jobs]
    manifest = {
        "config": {
            # full template documents, so the manifest alone reconstructs
            # every scene even for inline or rescaled templates
            "templates": [asdict(t) for t in templates],
            "master_seed": master_seed,
            "occlusion_free": occlusion_free,
            "separation": separation,
            "nn_channels": nn_channels,
            "canvas": templates[0].canvas_size,
        },
        "n": n,
        "scenes": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="ascii") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    return manifest


def reconstruct_scene(manifest: dict, index: int) -> Scene:
    """Re-render scene ``index`` of a manifest from its stored seed."""
    cfg = manifest["config"]
    entry = manifest["scenes"][index]
    by_name = {}
    for doc in cfg["templates"]:
        t = template_from_dict(doc) if isinstance(doc, dict) else get_template(doc)
        by_name[t.name] = t
    return compose_scene(
        by_name[entry["template"]],
        entry["seed"],
        occlusion_free=cfg.get("occlusion_free", False),
        separation=cfg.get("separation", 3.0),
    )


# ---------------------------------------------------------------------------
# parameter audit


def _polyline_headings(pts: np.ndarray) -> np.ndarray:
    d = np.diff(pts, axis=0)
    return np.degrees(np.arctan2(d[:, 1], d[:, 0]))


def _wrap_angle(a: float) -> float:
    while a > 180.0:
        a -= 360.0
    while a < -180.0:
        a += 360.0
    return a


def audit_scene(template: SceneTemplate, seed: int, eps: float = 1e-6) -> list[str]:
    """Re-derive one scene's geometry from its seed and check every sampled
    quantity against the template's declared ranges.

    Lengths and angles are recomputed from the polyline vertices, not read
    back from the stored sampling parameters, so the audit is an
    independent route.  Returns a list of violation strings (empty when
    the scene is compliant).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return audit_elements(template, plan_elements(template, rng), seed, eps)


def audit_elements(
    template: SceneTemplate, elements, seed: int, eps: float = 1e-6
) -> list[str]:
    """Check a planned element list against a template's declared ranges.

    The fBm coverage check widens its +/-2 % window by the counting
    granularity ``1.5 / size**2``: a handful-of-pixels patch cannot hit an
    arbitrary fraction exactly.
    """
    bad: list[str] = []
    counts = {"linear": 0, "large": 0, "medium": 0, "tiny": 0}
    for e in elements:
        counts[e.category] += 1
        tag = f"scene seed {seed} element {e.order} ({e.category})"
        if e.category == "linear":
            w = e.params["width"]
            if not template.width_range[0] - eps <= w <= template.width_range[1] + eps:
                bad.append(f"{tag}: width {w} outside {template.width_range}")
            seg = np.hypot(*np.diff(e.polyline, axis=0).T)
            headings = _polyline_headings(e.polyline)
            turns = [
                _wrap_angle(b - a) for a, b in zip(headings[:-1], headings[1:])
            ]
            if e.params["style"] == "angular":
                lo, hi = template.segment_length_range
                if seg.size and (seg.min() < lo - eps or seg.max() > hi + eps):
                    bad.append(f"{tag}: segment lengths {seg} outside [{lo},{hi}]")
                for t in turns:
                    if abs(t) > 120.0 + eps:
                        bad.append(f"{tag}: turn {t} exceeds 120 degrees")
                    if min(abs(abs(t) - a) for a in template.turn_angles) > 1e-3:
                        bad.append(f"{tag}: turn {t} not in the constrained set")
            else:
                lo, hi = template.step_size_range
                if seg.size and (seg.min() < lo - eps or seg.max() > hi + eps):
                    bad.append(f"{tag}: step lengths outside [{lo},{hi}]")
                variation = e.params["variation"]
                vlo, vhi = template.angular_variation_range
                if not vlo - eps <= variation <= vhi + eps:
                    bad.append(f"{tag}: variation {variation} outside [{vlo},{vhi}]")
                for t in turns:
                    if abs(t) > variation + 1e-3:
                        bad.append(f"{tag}: heading delta {t} exceeds {variation}")
        else:
            p = getattr(template, e.category)
            size = e.params["size"]
            if not p.size_range[0] <= size <= p.size_range[1]:
                bad.append(f"{tag}: size {size} outside {p.size_range}")
            if e.mask.shape != (size, size):
                bad.append(f"{tag}: mask shape {e.mask.shape} != size {size}")
            if e.params["kind"] == "fbm":
                octaves = e.params["octaves"]
                if not p.octaves_range[0] <= octaves <= p.octaves_range[1]:
                    bad.append(f"{tag}: octaves {octaves} outside {p.octaves_range}")
                target = e.params["coverage"]
                achieved = float(e.mask.mean())
                tol = 0.02 + 1.5 / (size * size)
                if abs(achieved - target) > tol:
                    bad.append(
                        f"{tag}: coverage {achieved:.4f} vs target {target:.4f} "
                        f"(tol {tol:.4f})"
                    )
    for cat, pair in [
        ("linear", template.n_linear_range),
        ("large", template.n_large_range),
        ("medium", template.n_medium_range),
        ("tiny", template.n_tiny_range),
    ]:
        if not pair[0] <= counts[cat] <= pair[1]:
            bad.append(f"seed {seed}: {cat} count {counts[cat]} outside {pair}")
    return bad
