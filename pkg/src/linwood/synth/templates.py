"""Scene templates: parameter spaces for the procedural generator.

The library ships layouts from sparse agricultural land to dense mixed
mosaics, each at the full 1024-px working canvas; :func:`scale_template`
derives desk-scale variants (default 256 px) with geometric ranges scaled
proportionally.  Angles never scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

__all__ = [
    "PatchParams",
    "SceneTemplate",
    "TEMPLATES",
    "get_template",
    "scale_template",
    "template_names",
    "template_from_dict",
    "template_to_json",
    "template_from_json",
]

#: constrained turn-angle set for angular polylines (degrees; sign is drawn
#: separately at sampling time)
TURN_ANGLE_SET = tuple(float(a) for a in range(0, 121, 15))

REFERENCE_CANVAS = 1024


@dataclass(frozen=True)
class PatchParams:
    """Parameter ranges for one patch size class."""

    size_range: tuple[int, int]
    coverage_range: tuple[float, float]
    octaves_range: tuple[int, int] = (1, 3)
    polygon_fraction: float = 0.0
    poly_vertices_range: tuple[int, int] = (5, 12)

    def validate(self, name: str) -> None:
        _check_range(self.size_range, f"{name}.size_range")
        _check_range(self.coverage_range, f"{name}.coverage_range")
        _check_range(self.octaves_range, f"{name}.octaves_range")
        if not (0.0 < self.coverage_range[0] and self.coverage_range[1] < 1.0):
            raise ValueError(f"{name}: coverage must stay strictly inside (0, 1)")
        if not 0.0 <= self.polygon_fraction <= 1.0:
            raise ValueError(f"{name}: polygon_fraction must lie in [0, 1]")
        if self.poly_vertices_range[0] < 3:
            raise ValueError(f"{name}: polygons need at least 3 vertices")


def _check_range(rng_pair, name: str) -> None:
    lo, hi = rng_pair
    if not lo <= hi:
        raise ValueError(f"{name} is empty: ({lo}, {hi})")


@dataclass(frozen=True)
class SceneTemplate:
    """Full parameter space for composing one synthetic scene.

    Geometric ranges are bound to the canvas size: the reference ranges
    (segments 100-800 px, steps 15-20 px) apply at the 1024-px canvas and
    scale linearly with it, which :meth:`validate` enforces.
    """

    name: str
    canvas_size: int = REFERENCE_CANVAS
    n_linear_range: tuple[int, int] = (1, 4)
    n_large_range: tuple[int, int] = (0, 1)
    n_medium_range: tuple[int, int] = (1, 4)
    n_tiny_range: tuple[int, int] = (3, 12)
    angular_fraction: float = 0.5
    segment_length_range: tuple[float, float] = (100.0, 800.0)
    n_segments_range: tuple[int, int] = (1, 5)
    turn_angles: tuple[float, ...] = TURN_ANGLE_SET
    step_size_range: tuple[float, float] = (15.0, 20.0)
    angular_variation_range: tuple[float, float] = (10.0, 40.0)
    n_steps_range: tuple[int, int] = (20, 50)
    width_range: tuple[float, float] = (4.0, 14.0)
    large: PatchParams = field(
        default_factory=lambda: PatchParams((200, 560), (0.35, 0.65))
    )
    medium: PatchParams = field(
        default_factory=lambda: PatchParams((64, 200), (0.3, 0.65))
    )
    tiny: PatchParams = field(
        default_factory=lambda: PatchParams((10, 44), (0.4, 0.8), (1, 2))
    )

    def validate(self) -> None:
        if self.canvas_size < 64:
            raise ValueError("canvas_size must be >= 64")
        f = self.canvas_size / REFERENCE_CANVAS
        eps = 1e-6
        for pair, nm in [
            (self.n_linear_range, "n_linear_range"),
            (self.n_large_range, "n_large_range"),
            (self.n_medium_range, "n_medium_range"),
            (self.n_tiny_range, "n_tiny_range"),
            (self.n_segments_range, "n_segments_range"),
            (self.n_steps_range, "n_steps_range"),
            (self.segment_length_range, "segment_length_range"),
            (self.step_size_range, "step_size_range"),
            (self.angular_variation_range, "angular_variation_range"),
            (self.width_range, "width_range"),
        ]:
            _check_range(pair, nm)
        if not 0.0 <= self.angular_fraction <= 1.0:
            raise ValueError("angular_fraction must lie in [0, 1]")
        if not (
            100.0 * f - eps <= self.segment_length_range[0]
            and self.segment_length_range[1] <= 800.0 * f + eps
        ):
            raise ValueError(
                f"segment lengths must stay within [{100 * f}, {800 * f}] "
                f"for a {self.canvas_size}-px canvas"
            )
        if not (
            15.0 * f - eps <= self.step_size_range[0]
            and self.step_size_range[1] <= 20.0 * f + eps
        ):
            raise ValueError(
                f"step sizes must stay within [{15 * f}, {20 * f}] "
                f"for a {self.canvas_size}-px canvas"
            )
        if not (
            10.0 - eps <= self.angular_variation_range[0]
            and self.angular_variation_range[1] <= 40.0 + eps
        ):
            raise ValueError("angular variation must stay within [10, 40] degrees")
        if not self.turn_angles:
            raise ValueError("turn_angles must be non-empty")
        for a in self.turn_angles:
            if not -eps <= a <= 120.0 + eps:
                raise ValueError("turn angles must stay within [0, 120] degrees")
        if self.width_range[0] <= 0:
            raise ValueError("line widths must be positive")
        self.large.validate("large")
        self.medium.validate("medium")
        self.tiny.validate("tiny")


def _scale_patch(p: PatchParams, f: float) -> PatchParams:
    lo = max(2, int(round(p.size_range[0] * f)))
    hi = max(lo, int(round(p.size_range[1] * f)))
    return replace(p, size_range=(lo, hi))


def scale_template(t: SceneTemplate, canvas_size: int) -> SceneTemplate:
    """Rescale all geometric ranges to a different canvas size.

    Counts, angles, octaves and coverages are resolution-free and stay
    unchanged; lengths scale by ``canvas_size / t.canvas_size``.  Line
    widths are clamped at 1.5 px so strokes stay connected on coarse
    canvases.
    """
    f = canvas_size / t.canvas_size
    if f == 1.0:
        return t
    scaled = replace(
        t,
        name=f"{t.name}_{canvas_size}",
        canvas_size=canvas_size,
        segment_length_range=(
            t.segment_length_range[0] * f,
            t.segment_length_range[1] * f,
        ),
        step_size_range=(t.step_size_range[0] * f, t.step_size_range[1] * f),
        width_range=(
            max(1.5, t.width_range[0] * f),
            max(1.5, t.width_range[1] * f),
        ),
        large=_scale_patch(t.large, f),
        medium=_scale_patch(t.medium, f),
        tiny=_scale_patch(t.tiny, f),
    )
    scaled.validate()
    return scaled


def _library() -> dict[str, SceneTemplate]:
    ts = [
        SceneTemplate(
            name="sparse_agricultural",
            n_linear_range=(1, 3),
            n_large_range=(0, 1),
            n_medium_range=(1, 3),
            n_tiny_range=(3, 10),
            angular_fraction=0.7,
        ),
        SceneTemplate(
            name="hedgerow_network",
            n_linear_range=(4, 8),
            n_large_range=(0, 0),
            n_medium_range=(0, 2),
            n_tiny_range=(2, 8),
            angular_fraction=0.85,
            n_segments_range=(2, 6),
        ),
        SceneTemplate(
            name="riparian_organic",
            n_linear_range=(2, 4),
            n_large_range=(0, 1),
            n_medium_range=(2, 4),
            n_tiny_range=(4, 12),
            angular_fraction=0.1,
            n_steps_range=(25, 60),
        ),
        SceneTemplate(
            name="dense_mixed",
            n_linear_range=(3, 6),
            n_large_range=(1, 2),
            n_medium_range=(3, 6),
            n_tiny_range=(10, 25),
            angular_fraction=0.5,
        ),
        SceneTemplate(
            name="patch_mosaic",
            n_linear_range=(1, 2),
            n_large_range=(2, 3),
            n_medium_range=(4, 8),
            n_tiny_range=(8, 20),
            angular_fraction=0.6,
            large=PatchParams((200, 560), (0.35, 0.65), polygon_fraction=0.5),
        ),
        SceneTemplate(
            name="tiny_scatter",
            n_linear_range=(1, 3),
            n_large_range=(0, 0),
            n_medium_range=(0, 3),
            n_tiny_range=(30, 80),
            angular_fraction=0.4,
        ),
        SceneTemplate(
            name="open_parkland",
            n_linear_range=(1, 2),
            n_large_range=(0, 1),
            n_medium_range=(1, 4),
            n_tiny_range=(5, 15),
            angular_fraction=0.3,
            large=PatchParams((200, 480), (0.35, 0.6), polygon_fraction=0.3),
        ),
    ]
    lib = {}
    for t in ts:
        t.validate()
        lib[t.name] = t
        desk = scale_template(t, 256)
        lib[desk.name] = desk
    return lib


TEMPLATES: dict[str, SceneTemplate] = _library()

#: default desk-scale mix used when no template list is configured
DEFAULT_MIX = tuple(name for name in TEMPLATES if name.endswith("_256"))


def template_names() -> list[str]:
    return sorted(TEMPLATES)


def get_template(name: str) -> SceneTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise KeyError(
            f"unknown template {name!r}; available: {', '.join(template_names())}"
        ) from None


def template_to_json(t: SceneTemplate) -> str:
    return json.dumps(asdict(t), sort_keys=True)


def template_from_dict(doc: dict) -> SceneTemplate:
    def pair(v):
        return tuple(v) if isinstance(v, (list, tuple)) else v

    doc = dict(doc)
    for key in ("large", "medium", "tiny"):
        if key in doc and isinstance(doc[key], dict):
            sub = {k: pair(v) for k, v in doc[key].items()}
            doc[key] = PatchParams(**sub)
    doc = {k: pair(v) for k, v in doc.items()}
    t = SceneTemplate(**doc)
    t.validate()
    return t


def template_from_json(text: str) -> SceneTemplate:
    return template_from_dict(json.loads(text))
