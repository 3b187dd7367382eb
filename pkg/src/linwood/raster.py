"""Georeferenced raster containers, file formats, resampling, rasterization.

Everything the other stages exchange on disk goes through this module.  Two
deliberately codec-free byte formats are used so any language can produce or
consume them:

* 8-bit bands (``mask8``, ``class8``): binary PGM (magic ``P5``), header
  ``P5\\n<width> <height>\\n255\\n`` followed by row-major raw bytes. A 1x1
  mask is therefore exactly 12 bytes.
* float bands (``height_f32``, ``index_f32``): a 16-byte header — the 8-byte
  magic ``LWF32R\\x00\\x01``, then width and height as little-endian uint32 —
  followed by row-major little-endian float32 pixels.

Every raster file ``<path>`` is accompanied by a JSON sidecar ``<path>.json``
holding ``origin_x``, ``origin_y``, ``pixel_size``, ``epsg`` and ``band``.
The origin is the top-left corner of the top-left pixel; row indices increase
southward, so the center of pixel ``(i, j)`` sits at
``(origin_x + (j + 0.5) * pixel_size, origin_y - (i + 0.5) * pixel_size)``.

Vector data travels as GeoJSON FeatureCollections with the class label in the
``cls`` property.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from linwood.validation import check_positive

__all__ = [
    "BANDS",
    "RasterGrid",
    "PolyFeature",
    "PolygonSet",
    "GridCatalog",
    "MosaicReader",
    "RasterFormatError",
    "read_raster",
    "write_raster",
    "read_geojson",
    "write_geojson",
    "resample_mean",
    "rasterize",
    "build_catalog",
    "open_mosaic",
]

_F32_MAGIC = b"LWF32R\x00\x01"

#: band name -> (numpy dtype, allowed value range or None)
BANDS = {
    "mask8": (np.uint8, (0, 1)),
    "class8": (np.uint8, (0, 2)),
    "height_f32": (np.float32, None),
    "index_f32": (np.float32, None),
}


class RasterFormatError(ValueError):
    """Malformed raster file, header, or sidecar."""


@dataclass(frozen=True)
class RasterGrid:
    """A georeferenced single-band raster.

    Values are treated as immutable after construction; kernels always
    allocate fresh output arrays, so grids are safe to share across workers.

    Parameters
    ----------
    data : ndarray
        Row-major pixel values, shape ``(height, width)``.
    origin_x, origin_y : float
        Top-left corner in projected CRS meters.
    pixel_size : float
        Square pixel edge length in meters.
    epsg : int
        CRS code; 0 means "not georeferenced" (synthetic scenes).
    band : str
        One of ``mask8``, ``class8``, ``height_f32``, ``index_f32``.
    """

    data: np.ndarray
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0
    epsg: int = 0
    band: str = "mask8"

    def __post_init__(self):
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")
        dtype, rng = BANDS[self.band]
        a = np.ascontiguousarray(self.data, dtype=dtype)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"raster must be 2-D and non-empty, got {a.shape}")
        check_positive(self.pixel_size, "pixel_size")
        if rng is not None and a.size:
            lo, hi = int(a.min()), int(a.max())
            if lo < rng[0] or hi > rng[1]:
                raise ValueError(
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

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the raster extent."""
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y,
        )

    def with_data(self, data: np.ndarray, band: str | None = None) -> "RasterGrid":
        """New grid with the same georeferencing but different pixels."""
        return RasterGrid(
            data,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            pixel_size=self.pixel_size,
            epsg=self.epsg,
            band=self.band if band is None else band,
        )

    def pixel_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin_x + (j + 0.5) * self.pixel_size,
            self.origin_y - (i + 0.5) * self.pixel_size,
        )


# ---------------------------------------------------------------------------
# file formats


def _sidecar_path(path: str) -> str:
    return str(path) + ".json"


def write_raster(grid: RasterGrid, path) -> None:
    """Write a raster plus its JSON sidecar.

    The byte stream is fully determined by the grid: repeated writes of equal
    grids produce identical files.
    """
    path = str(path)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"parent directory does not exist: {parent}")
    dtype, _ = BANDS[grid.band]
    if dtype == np.uint8:
        header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
        payload = header + grid.data.tobytes()
    else:
        header = _F32_MAGIC + np.array(
            [grid.width, grid.height], dtype="<u4"
        ).tobytes()
        payload = header + grid.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(payload)
    sidecar = {
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "pixel_size": grid.pixel_size,
        "epsg": grid.epsg,
        "band": grid.band,
    }
    with open(_sidecar_path(path), "w", encoding="ascii") as f:
        json.dump(sidecar, f, sort_keys=True)
        f.write("\n")


def _parse_pgm(blob: bytes, path: str) -> np.ndarray:
    # P5 <width> <height> <maxval> separated by whitespace, then raw bytes.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise RasterFormatError(f"{path}: truncated PGM header")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric PGM header") from exc
    if maxval != 255:
        raise RasterFormatError(f"{path}: unsupported PGM maxval {maxval}")
    data = blob[pos:]
    if len(data) != w * h:
        raise RasterFormatError(
            f"{path}: PGM payload is {len(data)} bytes, expected {w * h}"
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def _parse_f32(blob: bytes, path: str) -> np.ndarray:
    if len(blob) < 16:
        raise RasterFormatError(f"{path}: truncated float raster header")
    w, h = np.frombuffer(blob[8:16], dtype="<u4")
    w, h = int(w), int(h)
    expected = 16 + 4 * w * h
    if len(blob) != expected:
        raise RasterFormatError(
            f"{path}: float payload is {len(blob)} bytes, expected {expected}"
        )
    return (
        np.frombuffer(blob[16:], dtype="<f4").reshape(h, w).astype(np.float32)
    )


def read_raster(path) -> RasterGrid:
    """Read a raster written by :func:`write_raster` (format detected by magic)."""
    path = str(path)
    with open(path, "rb") as f:
        blob = f.read()
    sidecar_path = _sidecar_path(path)
    if not os.path.exists(sidecar_path):
        raise RasterFormatError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path, "r", encoding="ascii") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as exc:
            raise RasterFormatError(f"{sidecar_path}: invalid JSON") from exc
    for key in ("origin_x", "origin_y", "pixel_size", "epsg", "band"):
        if key not in meta:
            raise RasterFormatError(f"{sidecar_path}: missing key {key!r}")
    band = meta["band"]
    if band not in BANDS:
        raise RasterFormatError(f"{sidecar_path}: unknown band {band!r}")
    if blob[:2] == b"P5":
        if BANDS[band][0] != np.uint8:
            raise RasterFormatError(f"{path}: PGM file but band {band!r}")
        data = _parse_pgm(blob, path)
    elif blob[:8] == _F32_MAGIC:
        if BANDS[band][0] != np.float32:
            raise RasterFormatError(f"{path}: float file but band {band!r}")
        data = _parse_f32(blob, path)
    else:
        raise RasterFormatError(f"{path}: unrecognized raster magic")
    try:
        return RasterGrid(
            data,
            origin_x=float(meta["origin_x"]),
            origin_y=float(meta["origin_y"]),
            pixel_size=float(meta["pixel_size"]),
            epsg=int(meta["epsg"]),
            band=band,
        )
    except (TypeError, ValueError) as exc:
        raise RasterFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# vector data


@dataclass
class PolyFeature:
    """One polygon (exterior ring plus holes) with a class label.

    Rings are closed coordinate sequences (first vertex repeated last) with
    at least 4 vertices.
    """

    exterior: list[tuple[float, float]]
    holes: list[list[tuple[float, float]]] = field(default_factory=list)
    cls: int = 1
    attrs: dict = field(default_factory=dict)

    def rings(self):
        yield self.exterior
        yield from self.holes

    def validate(self) -> None:
        for ring in self.rings():
            if len(ring) < 4:
                raise ValueError(f"ring has {len(ring)} vertices, need >= 4")
            if tuple(ring[0]) != tuple(ring[-1]):
                raise ValueError("ring is not closed (first != last vertex)")


@dataclass
class PolygonSet:
    features: list[PolyFeature] = field(default_factory=list)
    epsg: int = 0

    def validate(self) -> None:
        for feat in self.features:
            feat.validate()

    def __len__(self) -> int:
        return len(self.features)


def write_geojson(polys: PolygonSet, path) -> None:
    polys.validate()
    features = []
    for feat in polys.features:
        coords = [[list(map(float, p)) for p in feat.exterior]]
        coords += [[list(map(float, p)) for p in ring] for ring in feat.holes]
        props = {"cls": int(feat.cls)}
        props.update(feat.attrs)
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": coords},
                "properties": props,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    if polys.epsg:
        doc["crs"] = {
            "type": "name",
            "properties": {"name": f"urn:ogc:def:crs:EPSG::{polys.epsg}"},
        }
    with open(str(path), "w", encoding="ascii") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def _rings_from_coords(coords):
    return [[(float(x), float(y)) for x, y in ring] for ring in coords]


def read_geojson(path) -> PolygonSet:
    with open(str(path), "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a FeatureCollection")
    epsg = 0
    crs_name = doc.get("crs", {}).get("properties", {}).get("name", "")
    if "EPSG::" in crs_name:
        epsg = int(crs_name.rsplit("::", 1)[1])
    out = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        props = dict(feat.get("properties") or {})
        cls = int(props.pop("cls", 1))
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            polys = list(geom["coordinates"])
        else:
            continue
        for coords in polys:
            rings = _rings_from_coords(coords)
            out.append(
                PolyFeature(rings[0], rings[1:], cls=cls, attrs=dict(props))
            )
    ps = PolygonSet(out, epsg=epsg)
    ps.validate()
    return ps


# ---------------------------------------------------------------------------
# resampling


def resample_mean(src: RasterGrid, target_pixel_size: float) -> RasterGrid:
    """Aggregate a float raster to a coarser grid by block averaging.

    The target pixel size must be an integer multiple of the source pixel
    size and the source dimensions must be divisible by that factor, so each
    output pixel is the exact arithmetic mean of a full block of source
    pixels and the output grid stays aligned to the source origin.
    """
    if BANDS[src.band][0] != np.float32:
        raise ValueError(f"resample_mean expects a float band, got {src.band!r}")
    check_positive(target_pixel_size, "target_pixel_size")
    ratio = target_pixel_size / src.pixel_size
    factor = round(ratio)
    if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"target pixel size {target_pixel_size} is not an integer "
            f"multiple of source pixel size {src.pixel_size}"
        )
    if factor == 1:
        return src
    h, w = src.data.shape
    if h % factor or w % factor:
        raise ValueError(
            f"raster dimensions {w}x{h} not divisible by factor {factor}"
        )
    blocks = src.data.reshape(h // factor, factor, w // factor, factor)
    mean = blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)
    return RasterGrid(
        mean,
        origin_x=src.origin_x,
        origin_y=src.origin_y,
        pixel_size=src.pixel_size * factor,
        epsg=src.epsg,
        band=src.band,
    )


# ---------------------------------------------------------------------------
# rasterization


@njit(cache=True)
def _burn_even_odd(out, xs, ys, starts, x0, y0, ps, i0, i1, j0, j1):
    n_rings = starts.shape[0] - 1
    for i in range(i0, i1):
        cy = y0 - (i + 0.5) * ps
        for j in range(j0, j1):
            cx = x0 + (j + 0.5) * ps
            inside = False
            for r in range(n_rings):
                a = starts[r]
                b = starts[r + 1]
                for k in range(a, b - 1):
                    y1 = ys[k]
                    y2 = ys[k + 1]
                    if (y1 > cy) != (y2 > cy):
                        x_at = xs[k] + (cy - y1) * (xs[k + 1] - xs[k]) / (y2 - y1)
                        if cx < x_at:
                            inside = not inside
            if inside:
                out[i, j] = 1


def rasterize(
    polys: PolygonSet, template: RasterGrid, classes=None
) -> RasterGrid:
    """Burn polygons onto the template grid as a binary mask.

    A pixel is set iff its center lies inside any (optionally class-filtered)
    feature under the even-odd rule, so holes punch through their exterior.
    """
    polys.validate()
    if polys.epsg and template.epsg and polys.epsg != template.epsg:
        raise ValueError(
            f"CRS mismatch: polygons epsg {polys.epsg}, "
            f"template epsg {template.epsg}"
        )
    out = np.zeros(template.data.shape, dtype=np.uint8)
    h, w = out.shape
    ps = template.pixel_size
    x0, y0 = template.origin_x, template.origin_y
    for feat in polys.features:
        if classes is not None and feat.cls not in classes:
            continue
        xs, ys, starts = _flatten_rings(feat)
        # clip the pixel loop to the feature's bounding box
        min_x, max_x = xs.min(), xs.max()
        min_y, max_y = ys.min(), ys.max()
        j0 = max(0, int(math.floor((min_x - x0) / ps - 0.5)))
        j1 = min(w, int(math.ceil((max_x - x0) / ps + 0.5)))
        i0 = max(0, int(math.floor((y0 - max_y) / ps - 0.5)))
        i1 = min(h, int(math.ceil((y0 - min_y) / ps + 0.5)))
        if j0 >= j1 or i0 >= i1:
            continue
        _burn_even_odd(out, xs, ys, starts, x0, y0, ps, i0, i1, j0, j1)
    return template.with_data(out, band="mask8")


def _flatten_rings(feat: PolyFeature):
    xs, ys, starts = [], [], [0]
    for ring in feat.rings():
        for x, y in ring:
            xs.append(x)
            ys.append(y)
        starts.append(len(xs))
    return (
        np.asarray(xs, dtype=np.float64),
        np.asarray(ys, dtype=np.float64),
        np.asarray(starts, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# grid catalogs (mosaics of single-band tiles on one common pixel grid)


@dataclass
class GridCatalog:
    """File paths plus bounding boxes forming a virtual mosaic."""

    entries: list[dict]  # {"path": str, "bounds": [minx, miny, maxx, maxy]}
    epsg: int

    def save(self, path) -> None:
        doc = {"epsg": self.epsg, "entries": self.entries}
        with open(str(path), "w", encoding="ascii") as f:
            json.dump(doc, f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "GridCatalog":
        with open(str(path), "r", encoding="ascii") as f:
            doc = json.load(f)
        return cls(entries=list(doc["entries"]), epsg=int(doc["epsg"]))


def build_catalog(paths) -> GridCatalog:
    """Assemble a catalog from raster files (reads only their sidecars)."""
    entries = []
    epsg = None
    for p in paths:
        g = read_raster(p)
        if epsg is None:
            epsg = g.epsg
        elif g.epsg != epsg:
            raise ValueError(f"{p}: epsg {g.epsg} differs from catalog {epsg}")
        entries.append({"path": str(p), "bounds": list(g.bounds)})
    if epsg is None:
        raise ValueError("catalog needs at least one raster")
    return GridCatalog(entries=entries, epsg=epsg)


class MosaicReader:
    """Window access over a catalog as one big virtual mask raster.

    All entries must share pixel size and band and sit on one common pixel
    lattice. Windows outside any entry read as zeros. Where entries overlap
    they must agree (identical pixel grids); the last entry wins on read.
    """

    def __init__(self, catalog: GridCatalog):
        if not catalog.entries:
            raise ValueError("empty catalog")
        self._grids = [read_raster(e["path"]) for e in catalog.entries]
        g0 = self._grids[0]
        self.pixel_size = g0.pixel_size
        self.epsg = catalog.epsg
        self.band = g0.band
        for g in self._grids[1:]:
            if g.pixel_size != g0.pixel_size:
                raise ValueError("catalog entries differ in pixel size")
            if g.band != g0.band:
                raise ValueError("catalog entries differ in band")
        min_x = min(g.bounds[0] for g in self._grids)
        max_y = max(g.bounds[3] for g in self._grids)
        max_x = max(g.bounds[2] for g in self._grids)
        min_y = min(g.bounds[1] for g in self._grids)
        ps = self.pixel_size
        for g in self._grids:
            col = (g.origin_x - min_x) / ps
            row = (max_y - g.origin_y) / ps
            if abs(col - round(col)) > 1e-6 or abs(row - round(row)) > 1e-6:
                raise ValueError("catalog entries are not grid-aligned")
        self.origin_x = min_x
        self.origin_y = max_y
        self.width = int(round((max_x - min_x) / ps))
        self.height = int(round((max_y - min_y) / ps))

    def read(self, col_off: int, row_off: int, width: int, height: int) -> np.ndarray:
        dtype = BANDS[self.band][0]
        out = np.zeros((height, width), dtype=dtype)
        ps = self.pixel_size
        for g in self._grids:
            gc = int(round((g.origin_x - self.origin_x) / ps))
            gr = int(round((self.origin_y - g.origin_y) / ps))
            # intersection of [row_off, row_off+height) with [gr, gr+g.height)
            r0 = max(row_off, gr)
            r1 = min(row_off + height, gr + g.height)
            c0 = max(col_off, gc)
            c1 = min(col_off + width, gc + g.width)
            if r0 >= r1 or c0 >= c1:
                continue
            out[r0 - row_off : r1 - row_off, c0 - col_off : c1 - col_off] = (
                g.data[r0 - gr : r1 - gr, c0 - gc : c1 - gc]
            )
        return out

    def as_grid(self) -> RasterGrid:
        return RasterGrid(
            self.read(0, 0, self.width, self.height),
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            pixel_size=self.pixel_size,
            epsg=self.epsg,
            band=self.band,
        )


def open_mosaic(source) -> MosaicReader:
    """Open a catalog JSON path, a GridCatalog, or a single raster path."""
    if isinstance(source, GridCatalog):
        return MosaicReader(source)
    path = str(source)
    if path.endswith(".json"):
        return MosaicReader(GridCatalog.load(path))
    return MosaicReader(
        GridCatalog(
            entries=[{"path": path, "bounds": list(read_raster(path).bounds)}],
            epsg=read_raster(path).epsg,
        )
    )
