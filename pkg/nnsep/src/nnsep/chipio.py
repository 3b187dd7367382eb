"""Chip raster IO: PGM/f32 files with JSON sidecars, chip-directory layout.

The separator exchanges data with the surrounding pipeline purely through
files, so this module implements the interchange formats from scratch:

* 8-bit bands (``mask8``, ``class8``): binary PGM — ``P5\\n<w> <h>\\n255\\n``
  followed by row-major raw bytes.
* float bands (``height_f32``, ``index_f32``): 8-byte magic
  ``LWF32R\\x00\\x01``, width and height as little-endian uint32, then
  row-major little-endian float32 pixels.
* every raster ``<path>`` has a JSON sidecar ``<path>.json`` with keys
  ``band``, ``epsg``, ``origin_x``, ``origin_y``, ``pixel_size`` (the origin
  is the top-left corner; rows increase southward).

Chip directories hold one triple of input rasters per chip id —
``<id>.input.c0`` (woody mask), ``<id>.input.c1`` (skeleton),
``<id>.input.c2`` (distance transform) — and receive two prediction rasters
per id: ``<id>.pred.cls`` (class8: 0 background, 1 linear, 2 non-linear) and
``<id>.pred.skel`` (index_f32 in [0, 1]).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BANDS",
    "Raster",
    "ChipFormatError",
    "read_raster",
    "write_raster",
    "list_chip_ids",
    "read_chip_inputs",
    "write_chip_pred",
    "INPUT_SUFFIXES",
    "PRED_SUFFIXES",
]

_F32_MAGIC = b"LWF32R\x00\x01"

#: band name -> (numpy dtype, inclusive value range or None)
BANDS = {
    "mask8": (np.uint8, (0, 1)),
    "class8": (np.uint8, (0, 2)),
    "height_f32": (np.float32, None),
    "index_f32": (np.float32, None),
}

INPUT_SUFFIXES = ("input.c0", "input.c1", "input.c2")
PRED_SUFFIXES = ("pred.cls", "pred.skel")


class ChipFormatError(ValueError):
    """Malformed raster file, sidecar, or chip directory."""


@dataclass(frozen=True)
class Raster:
    """A single-band raster with square pixels and a top-left origin."""

    data: np.ndarray
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0
    epsg: int = 0
    band: str = "mask8"

    def __post_init__(self):
        if self.band not in BANDS:
            raise ChipFormatError(f"unknown band {self.band!r}")
        dtype, rng = BANDS[self.band]
        a = np.ascontiguousarray(self.data, dtype=dtype)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ChipFormatError(f"raster must be 2-D and non-empty, got {a.shape}")
        if not (self.pixel_size > 0):
            raise ChipFormatError(f"pixel_size must be positive, got {self.pixel_size}")
        if rng is not None and a.size:
            lo, hi = int(a.min()), int(a.max())
            if lo < rng[0] or hi > rng[1]:
                raise ChipFormatError(
                    f"{self.band} values must lie in [{rng[0]}, {rng[1]}], "
                    f"got [{lo}, {hi}]"
                )
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def georef(self) -> tuple[float, float, float, int]:
        return (self.origin_x, self.origin_y, self.pixel_size, self.epsg)


def _sidecar_path(path: str) -> str:
    return str(path) + ".json"


def write_raster(raster: Raster, path) -> None:
    """Write a raster plus its JSON sidecar; output bytes are deterministic."""
    path = str(path)
    dtype, _ = BANDS[raster.band]
    if dtype == np.uint8:
        header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
        payload = header + raster.data.tobytes()
    else:
        header = _F32_MAGIC + np.array(
            [raster.width, raster.height], dtype="<u4"
        ).tobytes()
        payload = header + raster.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(payload)
    sidecar = {
        "origin_x": raster.origin_x,
        "origin_y": raster.origin_y,
        "pixel_size": raster.pixel_size,
        "epsg": raster.epsg,
        "band": raster.band,
    }
    with open(_sidecar_path(path), "w", encoding="ascii") as f:
        json.dump(sidecar, f, sort_keys=True)
        f.write("\n")


def _parse_pgm(blob: bytes, path: str) -> np.ndarray:
    # P5, then width/height/maxval separated by whitespace, then raw bytes.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ChipFormatError(f"truncated PGM header in {path}")
        fields.append(blob[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise ChipFormatError(f"non-numeric PGM header in {path}") from None
    if maxval != 255:
        raise ChipFormatError(f"PGM maxval must be 255 in {path}, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = blob[pos:]
    if width < 1 or height < 1 or len(body) != width * height:
        raise ChipFormatError(
            f"PGM payload size mismatch in {path}: header says "
            f"{width}x{height}, got {len(body)} bytes"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def _parse_f32(blob: bytes, path: str) -> np.ndarray:
    if len(blob) < 16:
        raise ChipFormatError(f"truncated f32 header in {path}")
    width, height = np.frombuffer(blob[8:16], dtype="<u4")
    width, height = int(width), int(height)
    body = blob[16:]
    if width < 1 or height < 1 or len(body) != width * height * 4:
        raise ChipFormatError(
            f"f32 payload size mismatch in {path}: header says "
            f"{width}x{height}, got {len(body)} bytes"
        )
    return np.frombuffer(body, dtype="<f4").reshape(height, width).astype(np.float32)


def read_raster(path) -> Raster:
    """Read a raster file and its sidecar back into a :class:`Raster`."""
    path = str(path)
    with open(path, "rb") as f:
        blob = f.read()
    try:
        with open(_sidecar_path(path), "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError:
        raise ChipFormatError(f"missing sidecar for {path}") from None
    except json.JSONDecodeError as exc:
        raise ChipFormatError(f"invalid sidecar for {path}: {exc}") from None
    for key in ("band", "epsg", "origin_x", "origin_y", "pixel_size"):
        if key not in sidecar:
            raise ChipFormatError(f"sidecar for {path} lacks {key!r}")
    band = sidecar["band"]
    if band not in BANDS:
        raise ChipFormatError(f"unknown band {band!r} in sidecar for {path}")
    dtype, _ = BANDS[band]
    if blob[:2] == b"P5":
        if dtype != np.uint8:
            raise ChipFormatError(f"band {band!r} cannot be stored as PGM: {path}")
        data = _parse_pgm(blob, path)
    elif blob[:8] == _F32_MAGIC:
        if dtype != np.float32:
            raise ChipFormatError(f"band {band!r} cannot be stored as f32: {path}")
        data = _parse_f32(blob, path)
    else:
        raise ChipFormatError(f"unrecognized raster magic in {path}")
    return Raster(
        data,
        origin_x=float(sidecar["origin_x"]),
        origin_y=float(sidecar["origin_y"]),
        pixel_size=float(sidecar["pixel_size"]),
        epsg=int(sidecar["epsg"]),
        band=band,
    )


# ---------------------------------------------------------------------------
# chip-directory layout


def list_chip_ids(directory) -> list[str]:
    """Sorted ids of chips whose full input triple is present."""
    suffix0 = "." + INPUT_SUFFIXES[0]
    ids = []
    for name in os.listdir(str(directory)):
        if name.endswith(suffix0):
            ids.append(name[: -len(suffix0)])
    complete = []
    for chip_id in ids:
        if all(
            os.path.exists(os.path.join(str(directory), f"{chip_id}.{sfx}"))
            for sfx in INPUT_SUFFIXES
        ):
            complete.append(chip_id)
    return sorted(complete)


def read_chip_inputs(directory, chip_id: str) -> tuple[Raster, Raster, Raster]:
    """Read one chip's (mask, skeleton, distance) input rasters.

    All three must share shape and georeferencing.
    """
    rasters = [
        read_raster(os.path.join(str(directory), f"{chip_id}.{sfx}"))
        for sfx in INPUT_SUFFIXES
    ]
    mask = rasters[0]
    for sfx, r in zip(INPUT_SUFFIXES[1:], rasters[1:]):
        if r.data.shape != mask.data.shape or r.georef() != mask.georef():
            raise ChipFormatError(
                f"chip {chip_id!r}: {sfx} does not align with {INPUT_SUFFIXES[0]}"
            )
    return rasters[0], rasters[1], rasters[2]


def write_chip_pred(
    directory,
    chip_id: str,
    class_data: np.ndarray,
    skeleton_prob: np.ndarray,
    like: Raster,
) -> None:
    """Write one chip's prediction pair, georeferenced like its input.

    ``class_data`` must be uint8-compatible with values in {0, 1, 2};
    ``skeleton_prob`` float with values in [0, 1]; both shaped like ``like``.
    """
    if class_data.shape != like.data.shape or skeleton_prob.shape != like.data.shape:
        raise ChipFormatError(
            f"chip {chip_id!r}: prediction shape {class_data.shape} / "
            f"{skeleton_prob.shape} does not match input {like.data.shape}"
        )
    prob = np.asarray(skeleton_prob, dtype=np.float32)
    if prob.size and (float(prob.min()) < 0.0 or float(prob.max()) > 1.0):
        raise ChipFormatError(
            f"chip {chip_id!r}: skeleton probabilities must lie in [0, 1]"
        )
    cls = Raster(
        np.asarray(class_data, dtype=np.uint8),
        origin_x=like.origin_x,
        origin_y=like.origin_y,
        pixel_size=like.pixel_size,
        epsg=like.epsg,
        band="class8",
    )
    skel = Raster(
        prob,
        origin_x=like.origin_x,
        origin_y=like.origin_y,
        pixel_size=like.pixel_size,
        epsg=like.epsg,
        band="index_f32",
    )
    write_raster(cls, os.path.join(str(directory), f"{chip_id}.{PRED_SUFFIXES[0]}"))
    write_raster(skel, os.path.join(str(directory), f"{chip_id}.{PRED_SUFFIXES[1]}"))
