"""Linear/non-linear separation stage.

Prepares the three-channel chip encoding (mask, skeleton, distance
context), provides a classical baseline separator that needs no trained
model, refines predictions against a predicted skeleton, and defines the
file-based invocation contract that external separator processes fulfil.

Chip exchange contract
----------------------
A separator is any process that maps input chips to prediction chips
through rasters in this package's file formats.  For a chip id ``<id>``
inside one exchange directory:

    <id>.input.c0   binary mask          (mask8)
    <id>.input.c1   skeleton of the mask (mask8)
    <id>.input.c2   distance to the mask (height_f32)
    <id>.pred.cls   class raster 0/1/2   (class8)
    <id>.pred.skel  skeleton probability (index_f32, values in [0, 1])

Each raster carries its JSON georeference sidecar.  An external command is
invoked once per exchange directory, receives the directory path as its
final argument, and must produce both prediction files for every chip id
that has a complete input triple before exiting 0.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from linwood.morphology import connected_components, distance_transform, skeletonize
from linwood.raster import RasterGrid, read_raster, write_raster
from linwood.validation import check_aligned, check_binary, check_class

DEFAULT_RATIO_THRESHOLD = 5.0
DEFAULT_REFINE_DIST = 25.0

_INPUT_SUFFIXES = ("input.c0", "input.c1", "input.c2")
_PRED_SUFFIXES = ("pred.cls", "pred.skel")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class SeparatorInput:
    """Three-channel chip stack fed to any separator.

    ``mask`` is the binary foreground, ``skeleton`` its thinned centerline,
    and ``distance`` the Euclidean distance from every pixel to the nearest
    foreground pixel (zero exactly on the foreground, a constant sentinel
    field when the mask is empty).
    """

    mask: RasterGrid
    skeleton: RasterGrid
    distance: RasterGrid

    def __post_init__(self) -> None:
        m = check_binary(self.mask.data, "mask")
        s = check_binary(self.skeleton.data, "skeleton")
        check_aligned(self.mask, self.skeleton, "mask", "skeleton")
        check_aligned(self.mask, self.distance, "mask", "distance")
        d = self.distance.data
        if not np.issubdtype(d.dtype, np.floating):
            raise ValueError(f"distance channel must be float, got {d.dtype}")
        if np.any(s > m):
            raise ValueError("skeleton contains pixels outside the mask")
        on_fg = d[m == 1]
        if on_fg.size and (on_fg != 0).any():
            raise ValueError("distance channel must be zero on the mask foreground")
        if m.any() and not (d[m == 0] > 0).all():
            raise ValueError("distance channel must be positive off the mask foreground")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.data.shape


@dataclass(frozen=True)
class SeparatorOutput:
    """Separator prediction: a 3-class raster plus a skeleton probability map."""

    class_mask: RasterGrid
    skeleton_prob: RasterGrid

    def __post_init__(self) -> None:
        check_class(self.class_mask.data, name="class_mask")
        check_aligned(self.class_mask, self.skeleton_prob, "class_mask", "skeleton_prob")
        p = self.skeleton_prob.data
        if not np.issubdtype(p.dtype, np.floating):
            raise ValueError(f"skeleton_prob must be float, got {p.dtype}")
        if p.size and (np.min(p) < 0.0 or np.max(p) > 1.0):
            raise ValueError("skeleton_prob values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# operations


def prepare_input(mask: RasterGrid) -> SeparatorInput:
    """Build the three-channel separator encoding from a binary mask chip."""
    check_binary(mask.data, "mask")
    return SeparatorInput(
        mask=mask,
        skeleton=skeletonize(mask),
        distance=distance_transform(mask),
    )


def baseline_separate(
    inp: SeparatorInput, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
) -> SeparatorOutput:
    """Classify each 8-connected component by skeletal elongation.

    For a component with skeleton pixel count ``L`` (channel 1 restricted
    to the component) and mean skeleton radius ``rbar`` (mean distance
    from those pixels to the background), the component is linear iff
    ``L / (2 * rbar) >= ratio_threshold``.  Components with an empty
    skeleton or zero radius are non-linear.  The skeleton probability is
    1.0 on skeleton pixels of linear components and 0.0 elsewhere.
    """
    if ratio_threshold <= 0:
        raise ValueError(f"ratio_threshold must be positive, got {ratio_threshold}")
    mask = inp.mask.data
    labels, _ = connected_components(inp.mask, connectivity=8, with_stats=False)
    n_comp = int(labels.max())
    class_map = np.zeros(mask.shape, dtype=np.uint8)
    skel_prob = np.zeros(mask.shape, dtype=np.float32)
    if n_comp:
        inverted = RasterGrid(
            (1 - mask).astype(np.uint8),
            inp.mask.origin_x,
            inp.mask.origin_y,
            inp.mask.pixel_size,
            inp.mask.epsg,
            "mask8",
        )
        inner = distance_transform(inverted).data
        skel = inp.skeleton.data.astype(bool)
        skel_labels = labels[skel]
        length = np.bincount(skel_labels, minlength=n_comp + 1).astype(np.float64)
        radius_sum = np.bincount(
            skel_labels, weights=inner[skel].astype(np.float64), minlength=n_comp + 1
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            rbar = radius_sum / length
            ratio = length / (2.0 * rbar)
        linear = (length > 0) & (radius_sum > 0) & (ratio >= ratio_threshold)
        class_map = np.where(labels > 0, np.where(linear[labels], 1, 2), 0).astype(
            np.uint8
        )
        skel_prob[skel & linear[labels]] = 1.0
    geo = inp.mask
    return SeparatorOutput(
        class_mask=RasterGrid(
            class_map, geo.origin_x, geo.origin_y, geo.pixel_size, geo.epsg, "class8"
        ),
        skeleton_prob=RasterGrid(
            skel_prob, geo.origin_x, geo.origin_y, geo.pixel_size, geo.epsg, "index_f32"
        ),
    )


def skeleton_refine(
    pred: SeparatorOutput, max_dist: float = DEFAULT_REFINE_DIST
) -> SeparatorOutput:
    """Demote linear pixels far from the predicted skeleton.

    The skeleton probability is binarized at 0.5; class-1 pixels whose
    Euclidean distance to the nearest skeleton pixel exceeds ``max_dist``
    become class 2.  Classes 0 and 2 and the probability map pass through
    unchanged.
    """
    if max_dist < 0:
        raise ValueError(f"max_dist must be non-negative, got {max_dist}")
    prob = pred.skeleton_prob
    skel_bin = RasterGrid(
        (prob.data >= 0.5).astype(np.uint8),
        prob.origin_x,
        prob.origin_y,
        prob.pixel_size,
        prob.epsg,
        "mask8",
    )
    dist = distance_transform(skel_bin).data
    cls = pred.class_mask.data.copy()
    cls[(cls == 1) & (dist > max_dist)] = 2
    return replace(
        pred,
        class_mask=RasterGrid(
            cls,
            pred.class_mask.origin_x,
            pred.class_mask.origin_y,
            pred.class_mask.pixel_size,
            pred.class_mask.epsg,
            "class8",
        ),
    )


# ---------------------------------------------------------------------------
# estimator-style wrapper


class BaselineSeparator:
    """Classical separator with a scikit-learn-style estimator surface.

    Stateless between chips: ``fit`` records nothing and exists so the
    separator slots into estimator-shaped pipelines; ``predict`` maps a
    :class:`SeparatorInput` to a :class:`SeparatorOutput`.
    """

    def __init__(self, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD) -> None:
        self.ratio_threshold = ratio_threshold

    def get_params(self, deep: bool = True) -> dict:
        return {"ratio_threshold": self.ratio_threshold}

    def set_params(self, **params) -> "BaselineSeparator":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r} for BaselineSeparator")
            setattr(self, key, value)
        return self

    def fit(self, X=None, y=None) -> "BaselineSeparator":
        return self

    def predict(self, inp: SeparatorInput) -> SeparatorOutput:
        return baseline_separate(inp, self.ratio_threshold)


# ---------------------------------------------------------------------------
# chip file exchange


def _check_chip_id(chip_id: str) -> str:
    if (
        not chip_id
        or os.sep in chip_id
        or (os.altsep and os.altsep in chip_id)
        or chip_id != os.path.basename(chip_id)
        or "." in chip_id
    ):
        raise ValueError(f"chip id must be a plain dot-free name, got {chip_id!r}")
    return chip_id


def write_chip_input(directory, chip_id: str, inp: SeparatorInput) -> None:
    """Write one chip's input triple into an exchange directory."""
    _check_chip_id(chip_id)
    base = os.path.join(str(directory), chip_id)
    for suffix, grid in zip(_INPUT_SUFFIXES, (inp.mask, inp.skeleton, inp.distance)):
        write_raster(grid, f"{base}.{suffix}")


def read_chip_input(directory, chip_id: str) -> SeparatorInput:
    """Read one chip's input triple from an exchange directory."""
    _check_chip_id(chip_id)
    base = os.path.join(str(directory), chip_id)
    mask, skeleton, distance = (
        read_raster(f"{base}.{suffix}") for suffix in _INPUT_SUFFIXES
    )
    return SeparatorInput(mask=mask, skeleton=skeleton, distance=distance)


def write_chip_pred(directory, chip_id: str, pred: SeparatorOutput) -> None:
    """Write one chip's prediction pair into an exchange directory."""
    _check_chip_id(chip_id)
    base = os.path.join(str(directory), chip_id)
    for suffix, grid in zip(_PRED_SUFFIXES, (pred.class_mask, pred.skeleton_prob)):
        write_raster(grid, f"{base}.{suffix}")


def read_chip_pred(directory, chip_id: str) -> SeparatorOutput:
    """Read one chip's prediction pair from an exchange directory."""
    _check_chip_id(chip_id)
    base = os.path.join(str(directory), chip_id)
    class_mask, skeleton_prob = (
        read_raster(f"{base}.{suffix}") for suffix in _PRED_SUFFIXES
    )
    return SeparatorOutput(class_mask=class_mask, skeleton_prob=skeleton_prob)


def list_chip_ids(directory) -> list[str]:
    """Chip ids with a complete input triple, sorted for stable ordering."""
    names = os.listdir(str(directory))
    present = set(names)
    ids = set()
    for name in names:
        if name.endswith(".input.c0"):
            chip_id = name[: -len(".input.c0")]
            if all(f"{chip_id}.{s}" in present for s in _INPUT_SUFFIXES):
                ids.add(chip_id)
    return sorted(ids)


def run_external(command: str, directory) -> None:
    """Invoke an external separator command over an exchange directory.

    The directory path is appended as the final argument.  After the
    command exits 0, every listed chip id must have both prediction files;
    anything else raises with the offending chip id or the captured
    stderr.
    """
    argv = shlex.split(command) + [str(directory)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-5:]
        raise RuntimeError(
            f"separator command failed with exit {proc.returncode}: "
            + " | ".join(tail)
        )
    present = set(os.listdir(str(directory)))
    for chip_id in list_chip_ids(directory):
        for suffix in _PRED_SUFFIXES:
            if f"{chip_id}.{suffix}" not in present:
                raise RuntimeError(
                    f"separator command produced no {suffix} for chip {chip_id!r}"
                )


class ExternalSeparator:
    """Separator backed by an external command over the chip file contract."""

    def __init__(self, command: str) -> None:
        if not command.strip():
            raise ValueError("external separator command must be non-empty")
        self.command = command

    def get_params(self, deep: bool = True) -> dict:
        return {"command": self.command}

    def fit(self, X=None, y=None) -> "ExternalSeparator":
        return self

    def predict(self, inp: SeparatorInput) -> SeparatorOutput:
        with tempfile.TemporaryDirectory(prefix="chips-") as tmp:
            write_chip_input(tmp, "chip", inp)
            run_external(self.command, tmp)
            return read_chip_pred(tmp, "chip")


def parse_separator_spec(spec: str):
    """Build a separator from a CLI spec: ``baseline`` or ``external:<command>``."""
    if spec == "baseline":
        return BaselineSeparator()
    if spec.startswith("external:"):
        return ExternalSeparator(spec[len("external:") :])
    raise ValueError(
        f"unknown separator spec {spec!r}; expected 'baseline' or 'external:<command>'"
    )


__all__ = [
    "DEFAULT_RATIO_THRESHOLD",
    "DEFAULT_REFINE_DIST",
    "SeparatorInput",
    "SeparatorOutput",
    "prepare_input",
    "baseline_separate",
    "skeleton_refine",
    "BaselineSeparator",
    "ExternalSeparator",
    "parse_separator_spec",
    "write_chip_input",
    "read_chip_input",
    "write_chip_pred",
    "read_chip_pred",
    "list_chip_ids",
    "run_external",
]
