"""Procedural synthetic scenes: binary inputs plus 3-class labels."""

from linwood.synth.dataset import (
    audit_elements,
    audit_scene,
    generate_dataset,
    reconstruct_scene,
    resolve_templates,
    scene_seed,
)
from linwood.synth.geometry import (
    gen_angular_polyline,
    gen_organic_polyline,
    gen_polygon_patch,
    star_polygon,
    stroke_polyline,
)
from linwood.synth.noise import fbm_field, gen_fbm_patch, value_noise
from linwood.synth.scene import (
    Scene,
    SceneElement,
    compose_scene,
    element_footprint,
    plan_elements,
    render_elements,
)
from linwood.synth.templates import (
    DEFAULT_MIX,
    TEMPLATES,
    PatchParams,
    SceneTemplate,
    get_template,
    scale_template,
    template_from_dict,
    template_from_json,
    template_names,
    template_to_json,
)

__all__ = [
    "DEFAULT_MIX",
    "TEMPLATES",
    "PatchParams",
    "Scene",
    "SceneElement",
    "SceneTemplate",
    "audit_elements",
    "audit_scene",
    "compose_scene",
    "element_footprint",
    "fbm_field",
    "gen_angular_polyline",
    "gen_fbm_patch",
    "gen_organic_polyline",
    "gen_polygon_patch",
    "generate_dataset",
    "get_template",
    "plan_elements",
    "reconstruct_scene",
    "render_elements",
    "resolve_templates",
    "scale_template",
    "scene_seed",
    "star_polygon",
    "stroke_polyline",
    "template_from_dict",
    "template_from_json",
    "template_names",
    "template_to_json",
    "value_noise",
]
