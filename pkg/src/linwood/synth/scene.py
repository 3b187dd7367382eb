"""Scene composition: element sampling, layered rendering, labels.

A scene is rendered background -> patches (large, then medium, then tiny)
-> linear features, with later elements occluding earlier ones; a pixel's
label is that of the last element covering it.  All patch classes map to
class 2, linear features to class 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from linwood.morphology import distance_transform
from linwood.raster import RasterGrid
from linwood.synth.geometry import (
    gen_angular_polyline,
    gen_organic_polyline,
    gen_polygon_patch,
    stroke_polyline,
)
from linwood.synth.noise import gen_fbm_patch_with_params
from linwood.synth.templates import SceneTemplate

__all__ = [
    "SceneElement",
    "Scene",
    "plan_elements",
    "render_elements",
    "element_footprint",
    "compose_scene",
]

CLASS_BACKGROUND = 0
CLASS_LINEAR = 1
CLASS_NONLINEAR = 2

#: category -> rendered class
CATEGORY_CLASS = {"linear": 1, "large": 2, "medium": 2, "tiny": 2}


@dataclass
class SceneElement:
    """One renderable element: a buffered polyline or a patch mask.

    ``category`` is one of linear/large/medium/tiny (background is the
    implicit zeroth layer).  Linear elements carry a polyline of at least
    two vertices plus a stroke width; patch elements carry a non-empty
    mask and its top-left placement.
    """

    category: str
    order: int
    polyline: np.ndarray | None = None
    width: float = 0.0
    mask: np.ndarray | None = None
    offset: tuple[int, int] = (0, 0)  # (row, col) of mask's top-left
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.category == "linear":
            if self.polyline is None or self.polyline.shape[0] < 2:
                raise ValueError("linear element needs >= 2 vertices")
            if self.width <= 0:
                raise ValueError("linear element needs a positive width")
        else:
            if self.mask is None or not self.mask.any():
                raise ValueError("patch element needs a non-empty mask")


@dataclass(frozen=True)
class Scene:
    """Rendered scene pair: binary input mask and 3-class label."""

    input: RasterGrid
    label: RasterGrid
    seed: int
    template_id: str


def _rng_for_seed(seed: int):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _draw_patch(rng, category: str, template: SceneTemplate, order: int) -> SceneElement:
    p = getattr(template, category)
    size = int(rng.integers(p.size_range[0], p.size_range[1] + 1))
    use_polygon = (
        category == "large"
        and p.polygon_fraction > 0
        and rng.random() < p.polygon_fraction
    )
    if use_polygon:
        n_vertices = int(
            rng.integers(p.poly_vertices_range[0], p.poly_vertices_range[1] + 1)
        )
        mask, _ring = gen_polygon_patch(rng, size, n_vertices)
        params = {"kind": "polygon", "size": size, "n_vertices": n_vertices}
    else:
        coverage = float(rng.uniform(*p.coverage_range))
        octaves = int(rng.integers(p.octaves_range[0], p.octaves_range[1] + 1))
        mask, achieved = gen_fbm_patch_with_params(rng, size, coverage, octaves)
        params = {
            "kind": "fbm",
            "size": size,
            "coverage": coverage,
            "achieved_coverage": achieved,
            "octaves": octaves,
        }
    # placement: center uniform over the canvas
    cy, cx = rng.uniform(0.0, template.canvas_size, 2)
    offset = (int(round(cy - size / 2.0)), int(round(cx - size / 2.0)))
    return SceneElement(
        category=category, order=order, mask=mask, offset=offset, params=params
    )


def _draw_linear(rng, template: SceneTemplate, order: int) -> SceneElement:
    if rng.random() < template.angular_fraction:
        pts, params = gen_angular_polyline(rng, template)
    else:
        pts, params = gen_organic_polyline(rng, template)
    width = float(rng.uniform(*template.width_range))
    params["width"] = width
    return SceneElement(
        category="linear", order=order, polyline=pts, width=width, params=params
    )


def _sample_counts(rng, template: SceneTemplate) -> dict[str, int]:
    return {
        "linear": int(
            rng.integers(template.n_linear_range[0], template.n_linear_range[1] + 1)
        ),
        "large": int(
            rng.integers(template.n_large_range[0], template.n_large_range[1] + 1)
        ),
        "medium": int(
            rng.integers(template.n_medium_range[0], template.n_medium_range[1] + 1)
        ),
        "tiny": int(
            rng.integers(template.n_tiny_range[0], template.n_tiny_range[1] + 1)
        ),
    }


def _draw_element(rng, category: str, template: SceneTemplate, order: int) -> SceneElement:
    if category == "linear":
        return _draw_linear(rng, template, order)
    return _draw_patch(rng, category, template, order)


#: element generation / render order (linear last so it occludes patches)
_CATEGORY_ORDER = ("large", "medium", "tiny", "linear")


def plan_elements(template: SceneTemplate, rng) -> list[SceneElement]:
    """Sample all elements of a scene without rendering the canvas.

    The draw sequence is fixed (counts first, then large -> medium -> tiny
    -> linear), so a scene's geometry is fully reproducible from its seed.
    """
    counts = _sample_counts(rng, template)
    elements = []
    for category in _CATEGORY_ORDER:
        for _ in range(counts[category]):
            elements.append(_draw_element(rng, category, template, len(elements)))
    return elements


def element_footprint(elem: SceneElement, canvas_size: int) -> np.ndarray:
    """Render one element's canvas coverage as a boolean mask."""
    if elem.category == "linear":
        return stroke_polyline(
            (canvas_size, canvas_size), elem.polyline, elem.width
        ).astype(bool)
    out = np.zeros((canvas_size, canvas_size), dtype=bool)
    _paste(out, elem.mask, elem.offset[0], elem.offset[1])
    return out


def _paste(canvas: np.ndarray, mask: np.ndarray, r0: int, c0: int) -> None:
    h, w = canvas.shape
    mh, mw = mask.shape
    rs = max(r0, 0)
    cs = max(c0, 0)
    re = min(r0 + mh, h)
    ce = min(c0 + mw, w)
    if rs >= re or cs >= ce:
        return
    canvas[rs:re, cs:ce] |= mask[rs - r0 : re - r0, cs - c0 : ce - c0]


def render_elements(elements, canvas_size: int) -> np.ndarray:
    """Burn elements onto a fresh label canvas in list order.

    A pixel's label is that of the last element covering it.
    """
    label = np.zeros((canvas_size, canvas_size), dtype=np.uint8)
    for elem in elements:
        elem.validate()
        fp = element_footprint(elem, canvas_size)
        label[fp] = CATEGORY_CLASS[elem.category]
    return label


def compose_scene(
    template: SceneTemplate,
    seed: int,
    occlusion_free: bool = False,
    separation: float = 3.0,
    max_tries: int = 12,
) -> Scene:
    """Compose and render one scene deterministically from its seed.

    With ``occlusion_free`` enabled, each element is re-drawn until its
    footprint keeps at least ``separation`` pixels of clearance from
    everything already placed (elements that cannot be placed within
    ``max_tries`` attempts are dropped), so no element touches or covers
    another and every connected component carries a single class.
    """
    template.validate()
    rng = _rng_for_seed(seed)
    size = template.canvas_size
    label = np.zeros((size, size), dtype=np.uint8)

    if not occlusion_free:
        label = render_elements(plan_elements(template, rng), size)
    else:
        counts = _sample_counts(rng, template)
        occupied = np.zeros((size, size), dtype=bool)
        clearance = None  # distance to occupied pixels; None while empty
        n_placed = 0
        for category in _CATEGORY_ORDER:
            for _ in range(counts[category]):
                for _attempt in range(max_tries):
                    elem = _draw_element(rng, category, template, n_placed)
                    fp = element_footprint(elem, size)
                    if not fp.any():
                        continue  # fell entirely outside the canvas
                    if clearance is None or (clearance[fp] >= separation).all():
                        label[fp] = CATEGORY_CLASS[category]
                        occupied |= fp
                        clearance = distance_transform(
                            occupied.astype(np.uint8)
                        )
                        n_placed += 1
                        break

    mask = (label != 0).astype(np.uint8)
    common = dict(origin_x=0.0, origin_y=float(size), pixel_size=1.0, epsg=0)
    return Scene(
        input=RasterGrid(mask, band="mask8", **common),
        label=RasterGrid(label, band="class8", **common),
        seed=int(seed),
        template_id=template.name,
    )
