"""Seamless large-raster inference.

Plans overlapping chips (50 % stride), runs a separator per chip, and
stitches only each chip's keep-region so the output partitions the raster
exactly once.  Also vectorizes class rasters into pixel-edge polygons and
post-processes them (boundary selection, erasure, minimum area).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from linwood.morphology import connected_components
from linwood.raster import (
    GridCatalog,
    MosaicReader,
    PolyFeature,
    PolygonSet,
    RasterGrid,
    open_mosaic,
)
from linwood.separator import (
    ExternalSeparator,
    prepare_input,
    read_chip_pred,
    run_external,
    skeleton_refine,
    write_chip_input,
)
from linwood.validation import check_class

DEFAULT_CHIP_SIZE = 1024
DEFAULT_MIN_AREA = 250.0


# ---------------------------------------------------------------------------
# chip planning


@dataclass(frozen=True)
class ChipWindow:
    """One chip: its raster window and the output region it contributes.

    The window spans ``chip_size`` pixels from ``(col_off, row_off)`` and
    may extend past the raster (the reader zero-pads); ``width``/``height``
    record the in-raster part.  ``keep`` is ``(col0, row0, col1, row1)``
    in absolute raster coordinates, half-open.
    """

    col_off: int
    row_off: int
    width: int
    height: int
    keep: tuple[int, int, int, int]

    @property
    def chip_id(self) -> str:
        return f"r{self.row_off:+08d}c{self.col_off:+08d}".replace("+", "p").replace(
            "-", "m"
        )


@dataclass(frozen=True)
class ChipPlan:
    """Chip windows covering an extent with an exact keep-region partition."""

    extent: tuple[int, int]  # (height, width)
    chip_size: int
    stride: int
    windows: tuple[ChipWindow, ...]

    def __post_init__(self) -> None:
        if self.stride * 2 != self.chip_size:
            raise ValueError(
                f"stride must be half the chip size, got {self.stride} vs {self.chip_size}"
            )
        # Exact-partition proof without rasterizing: every keep lies inside
        # its window and the extent, no two keeps overlap, and their areas
        # sum to the extent's area.
        h, w = self.extent
        area = 0
        keeps = []
        for win in self.windows:
            c0, r0, c1, r1 = win.keep
            if not (win.col_off <= c0 <= c1 <= win.col_off + self.chip_size):
                raise ValueError(f"keep region leaves its chip window: {win}")
            if not (win.row_off <= r0 <= r1 <= win.row_off + self.chip_size):
                raise ValueError(f"keep region leaves its chip window: {win}")
            if c0 < 0 or r0 < 0 or c1 > w or r1 > h:
                raise ValueError(f"keep region leaves the extent: {win}")
            area += (c1 - c0) * (r1 - r0)
            keeps.append((c0, r0, c1, r1))
        for i, a in enumerate(keeps):
            for b in keeps[i + 1 :]:
                if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                    raise ValueError(f"keep regions overlap: {a} and {b}")
        if area != h * w:
            raise ValueError("keep regions do not cover the extent exactly")


def _axis_offsets(extent: int, chip: int, stride: int) -> list[int]:
    if extent <= chip:
        return [0]
    n = int(np.ceil((extent - chip) / stride)) + 1
    return [k * stride for k in range(n)]


def _axis_keeps(offsets: list[int], extent: int, chip: int) -> list[tuple[int, int]]:
    quarter = chip // 4
    keeps = []
    for i, off in enumerate(offsets):
        lo = 0 if i == 0 else off + quarter
        hi = extent if i == len(offsets) - 1 else off + 3 * quarter
        keeps.append((lo, hi))
    return keeps


def plan_chips(extent: tuple[int, int], chip_size: int = DEFAULT_CHIP_SIZE) -> ChipPlan:
    """Chip windows at half-chip stride whose keep-regions tile the extent.

    Interior chips keep their central ``chip_size/2`` square; edge chips
    extend that square to the raster border.  Chips may overrun the raster
    on the right/bottom; the overrun reads as zeros and is never kept.
    """
    h, w = int(extent[0]), int(extent[1])
    if h < 1 or w < 1:
        raise ValueError(f"extent must be at least 1x1, got {extent}")
    if chip_size < 4 or chip_size % 4:
        raise ValueError(f"chip_size must be a positive multiple of 4, got {chip_size}")
    stride = chip_size // 2
    col_offs = _axis_offsets(w, chip_size, stride)
    row_offs = _axis_offsets(h, chip_size, stride)
    col_keeps = _axis_keeps(col_offs, w, chip_size)
    row_keeps = _axis_keeps(row_offs, h, chip_size)
    windows = []
    for row_off, (r0, r1) in zip(row_offs, row_keeps):
        for col_off, (c0, c1) in zip(col_offs, col_keeps):
            windows.append(
                ChipWindow(
                    col_off=col_off,
                    row_off=row_off,
                    width=min(chip_size, w - col_off),
                    height=min(chip_size, h - row_off),
                    keep=(c0, r0, c1, r1),
                )
            )
    return ChipPlan(
        extent=(h, w), chip_size=chip_size, stride=stride, windows=tuple(windows)
    )


# ---------------------------------------------------------------------------
# stitched inference


class _GridReader:
    """Window access over a single in-memory raster, zero-padded outside."""

    def __init__(self, grid: RasterGrid):
        self._grid = grid
        self.origin_x = grid.origin_x
        self.origin_y = grid.origin_y
        self.pixel_size = grid.pixel_size
        self.epsg = grid.epsg
        self.band = grid.band
        self.height, self.width = grid.data.shape

    def read(self, col_off: int, row_off: int, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=self._grid.data.dtype)
        r0 = max(row_off, 0)
        r1 = min(row_off + height, self.height)
        c0 = max(col_off, 0)
        c1 = min(col_off + width, self.width)
        if r0 < r1 and c0 < c1:
            out[r0 - row_off : r1 - row_off, c0 - col_off : c1 - col_off] = (
                self._grid.data[r0:r1, c0:c1]
            )
        return out


def _as_reader(mosaic):
    if isinstance(mosaic, RasterGrid):
        return _GridReader(mosaic)
    if isinstance(mosaic, GridCatalog):
        return open_mosaic(mosaic)
    if isinstance(mosaic, (MosaicReader, _GridReader)):
        return mosaic
    raise TypeError(f"expected RasterGrid or GridCatalog, got {type(mosaic).__name__}")


def _chip_grid(reader, win: ChipWindow, chip_size: int) -> RasterGrid:
    data = reader.read(win.col_off, win.row_off, chip_size, chip_size)
    return RasterGrid(
        data.astype(np.uint8, copy=False),
        reader.origin_x + win.col_off * reader.pixel_size,
        reader.origin_y - win.row_off * reader.pixel_size,
        reader.pixel_size,
        reader.epsg,
        "mask8",
    )


def run(
    separator,
    mosaic,
    chip_size: int = DEFAULT_CHIP_SIZE,
    workers: int = 1,
    refine: bool = False,
    refine_dist: float = 25.0,
) -> RasterGrid:
    """Separate a full raster chip by chip and stitch the keep-regions.

    The output depends only on the raster content and the separator: chip
    keep-regions are disjoint, so neither worker count nor completion
    order can change a single output pixel.  A failing separator aborts
    with the offending chip id.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    reader = _as_reader(mosaic)
    plan = plan_chips((reader.height, reader.width), chip_size)
    out = np.zeros((reader.height, reader.width), dtype=np.uint8)

    def stitch(win: ChipWindow, pred) -> None:
        if refine:
            pred = skeleton_refine(pred, max_dist=refine_dist)
        cls = pred.class_mask.data
        c0, r0, c1, r1 = win.keep
        out[r0:r1, c0:c1] = cls[
            r0 - win.row_off : r1 - win.row_off, c0 - win.col_off : c1 - win.col_off
        ]

    if isinstance(separator, ExternalSeparator):
        import tempfile

        with tempfile.TemporaryDirectory(prefix="tiled-chips-") as tmp:
            for win in plan.windows:
                write_chip_input(
                    tmp, win.chip_id, prepare_input(_chip_grid(reader, win, chip_size))
                )
            run_external(separator.command, tmp)
            for win in plan.windows:
                try:
                    pred = read_chip_pred(tmp, win.chip_id)
                except Exception as exc:
                    raise RuntimeError(
                        f"separator failed on chip {win.chip_id}: {exc}"
                    ) from exc
                stitch(win, pred)
    else:

        def infer(win: ChipWindow):
            try:
                return win, separator.predict(
                    prepare_input(_chip_grid(reader, win, chip_size))
                )
            except Exception as exc:
                raise RuntimeError(
                    f"separator failed on chip {win.chip_id}: {exc}"
                ) from exc

        if workers == 1:
            results = map(infer, plan.windows)
            for win, pred in results:
                stitch(win, pred)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for win, pred in pool.map(infer, plan.windows):
                    stitch(win, pred)

    return RasterGrid(
        out,
        reader.origin_x,
        reader.origin_y,
        reader.pixel_size,
        reader.epsg,
        "class8",
    )


# ---------------------------------------------------------------------------
# vectorization


_RIGHT_OF = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}


def _trace_rings(comp: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed pixel-edge rings of a binary region, interior on the left.

    Coordinates are pixel-corner ``(col, row)`` pairs.  At checkerboard
    vertices the walk prefers the right turn, which keeps diagonally
    touching foreground in a single ring (8-connected semantics).
    """
    padded = np.pad(comp.astype(bool), 1)
    edges: dict[tuple[int, int], list[tuple[tuple[int, int], tuple[int, int]]]] = {}

    def add(start, end):
        d = (end[0] - start[0], end[1] - start[1])
        edges.setdefault(start, []).append((end, d))

    core = padded[1:-1, 1:-1]
    rows, cols = np.nonzero(core & ~padded[:-2, 1:-1])  # open top edge
    for r, c in zip(rows.tolist(), cols.tolist()):
        add((c + 1, r), (c, r))
    rows, cols = np.nonzero(core & ~padded[2:, 1:-1])  # open bottom edge
    for r, c in zip(rows.tolist(), cols.tolist()):
        add((c, r + 1), (c + 1, r + 1))
    rows, cols = np.nonzero(core & ~padded[1:-1, :-2])  # open left edge
    for r, c in zip(rows.tolist(), cols.tolist()):
        add((c, r), (c, r + 1))
    rows, cols = np.nonzero(core & ~padded[1:-1, 2:])  # open right edge
    for r, c in zip(rows.tolist(), cols.tolist()):
        add((c + 1, r + 1), (c + 1, r))

    rings = []
    while edges:
        # Start at a simple vertex (one outgoing edge).  A ring may pass a
        # pinch vertex twice; starting there would close it after half a
        # lap.  Every ring's topmost-leftmost vertex is simple, so one
        # always remains.
        start = next(
            (v for v, items in edges.items() if len(items) == 1),
            next(iter(edges)),
        )
        end, d = edges[start][-1]
        _pop(edges, start)
        ring = [start, end]
        while ring[-1] != start:
            candidates = edges[ring[-1]]
            if len(candidates) == 1:
                nxt, nd = candidates[0]
            else:
                right = _RIGHT_OF[d]
                pick = 0
                for i, (_, cd) in enumerate(candidates):
                    if cd == right:
                        pick = i
                        break
                nxt, nd = candidates[pick]
            _pop(edges, ring[-1], nxt)
            ring.append(nxt)
            d = nd
        rings.append(ring)
    return rings


def _pop(edges, start, end=None) -> None:
    items = edges[start]
    if end is None:
        items.pop()
    else:
        for i, (e, _) in enumerate(items):
            if e == end:
                items.pop(i)
                break
    if not items:
        del edges[start]


def _ring_area2(ring) -> float:
    """Twice the shoelace area in (col, row) coordinates."""
    a = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
        a += x0 * y1 - x1 * y0
    return a


def vectorize(
    class_raster: RasterGrid, classes=(1, 2), simplify_tolerance: float = 0.0
) -> PolygonSet:
    """One polygon (with holes) per 8-connected same-class region.

    Boundaries follow pixel edges exactly, in world coordinates, exteriors
    wound so that burning the polygons back onto the same grid reproduces
    the class raster.  ``simplify_tolerance`` (in CRS units, default off)
    applies topology-preserving Douglas-Peucker simplification, trading
    the exact round-trip for smaller geometries.
    """
    if simplify_tolerance < 0:
        raise ValueError(
            f"simplify_tolerance must be non-negative, got {simplify_tolerance}"
        )
    data = check_class(class_raster.data, name="class raster")
    ps = class_raster.pixel_size
    x0, y0 = class_raster.origin_x, class_raster.origin_y
    features = []
    for cls in classes:
        cls_mask = (data == cls).astype(np.uint8)
        if not cls_mask.any():
            continue
        labels, _ = connected_components(cls_mask, connectivity=8, with_stats=False)
        slices = ndi.find_objects(labels)
        for label, slc in enumerate(slices, start=1):
            if slc is None:
                continue
            r0, c0 = slc[0].start, slc[1].start
            comp = labels[slc] == label
            rings = _trace_rings(comp)
            exterior = None
            holes = []
            for ring in rings:
                world = [
                    (x0 + (c0 + cx) * ps, y0 - (r0 + ry) * ps) for cx, ry in ring
                ]
                # negative shoelace in (col, row) space marks the outer ring
                if _ring_area2(ring) < 0:
                    exterior = world
                else:
                    holes.append(world)
            if exterior is None:  # pragma: no cover - tracing always yields one
                raise AssertionError("component traced without an outer ring")
            feat = PolyFeature(exterior=exterior, holes=holes, cls=int(cls))
            if simplify_tolerance > 0:
                feat = _simplify(feat, simplify_tolerance)
            features.append(feat)
    return PolygonSet(features=features, epsg=class_raster.epsg)


def _simplify(feat: PolyFeature, tolerance: float) -> PolyFeature:
    geom = _to_shapely(feat)
    if geom.geom_type != "Polygon":
        return feat  # pinched region; simplifying would split the feature
    geom = geom.simplify(tolerance, preserve_topology=True)
    if geom.geom_type != "Polygon" or geom.is_empty:
        return feat
    return PolyFeature(
        exterior=[(x, y) for x, y in geom.exterior.coords],
        holes=[[(x, y) for x, y in ring.coords] for ring in geom.interiors],
        cls=feat.cls,
        attrs=dict(feat.attrs),
    )


# ---------------------------------------------------------------------------
# post-processing


def _to_shapely(feat: PolyFeature):
    """Shapely geometry for a feature, normalizing pinch-point contacts.

    Pixel-edge tracing of 8-connected regions produces rings that touch
    themselves at single vertices (diagonal pixel contacts).  Those are
    repaired into equivalent (multi)polygons when the repair preserves the
    area exactly; anything else is a genuinely invalid ring and raises.
    """
    from shapely.geometry import MultiPolygon, Polygon
    from shapely.validation import explain_validity, make_valid

    poly = Polygon(feat.exterior, feat.holes)
    if poly.is_valid:
        return poly
    raw_area = poly.area  # shoelace; exact for self-touching rings
    repaired = make_valid(poly)
    parts = [
        g
        for g in getattr(repaired, "geoms", [repaired])
        if g.geom_type == "Polygon" and not g.is_empty
    ]
    if parts:
        total = sum(p.area for p in parts)
        if abs(total - raw_area) <= 1e-6 * max(raw_area, 1.0):
            return parts[0] if len(parts) == 1 else MultiPolygon(parts)
    raise ValueError(explain_validity(poly))


def _union(polys: PolygonSet | None):
    if polys is None or not polys.features:
        return None
    from shapely.ops import unary_union

    parts = []
    for feat in polys.features:
        try:
            parts.append(_to_shapely(feat))
        except ValueError as exc:
            warnings.warn(f"skipping invalid ring in overlay layer: {exc}", stacklevel=3)
    return unary_union(parts) if parts else None


def postprocess(
    polys: PolygonSet,
    min_area: float = DEFAULT_MIN_AREA,
    erase: PolygonSet | None = None,
    boundary: PolygonSet | None = None,
) -> PolygonSet:
    """Select by boundary, erase overlay geometry, then filter by area.

    Features that do not intersect the boundary layer are dropped; the
    union of the erase layer is subtracted from the survivors; parts with
    area below ``min_area`` (in squared CRS units, measured after
    erasure) are dropped.  Invalid rings are skipped with a warning.
    """
    if min_area < 0:
        raise ValueError(f"min_area must be non-negative, got {min_area}")
    boundary_geom = _union(boundary)
    erase_geom = _union(erase)
    out = []
    for feat in polys.features:
        try:
            geom = _to_shapely(feat)
        except ValueError as exc:
            warnings.warn(f"skipping invalid ring: {exc}", stacklevel=2)
            continue
        if boundary_geom is not None and not geom.intersects(boundary_geom):
            continue
        if erase_geom is not None:
            geom = geom.difference(erase_geom)
            if geom.is_empty:
                continue
        parts = getattr(geom, "geoms", [geom])
        for part in parts:
            if part.is_empty or part.area < min_area:
                continue
            out.append(
                PolyFeature(
                    exterior=[(x, y) for x, y in part.exterior.coords],
                    holes=[
                        [(x, y) for x, y in ring.coords] for ring in part.interiors
                    ],
                    cls=feat.cls,
                    attrs={**feat.attrs, "area_m2": float(part.area)},
                )
            )
    return PolygonSet(features=out, epsg=polys.epsg)


__all__ = [
    "DEFAULT_CHIP_SIZE",
    "DEFAULT_MIN_AREA",
    "ChipPlan",
    "ChipWindow",
    "plan_chips",
    "run",
    "vectorize",
    "postprocess",
]
