"""Polyline and polygon generators plus the exact stroke renderer.

Coordinates are pixel units with x growing rightward (columns) and y growing
downward (rows); the point ``(j + 0.5, i + 0.5)`` is the center of pixel
``(i, j)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from linwood.raster import PolyFeature, PolygonSet, RasterGrid, rasterize

__all__ = [
    "gen_angular_polyline",
    "gen_organic_polyline",
    "star_polygon",
    "gen_polygon_patch",
    "stroke_polyline",
]


def gen_angular_polyline(rng, template):
    """Piecewise-straight polyline with constrained turn angles.

    Segment lengths are drawn from the template's segment length range and
    each change of direction from its constrained turn-angle set with a
    random sign.  Returns ``(points, params)`` where points is an (n, 2)
    float array of (x, y) vertices and params records the sampled
    quantities for later audit.
    """
    lo, hi = template.segment_length_range
    n_seg = int(rng.integers(template.n_segments_range[0], template.n_segments_range[1] + 1))
    x, y = rng.uniform(0.0, template.canvas_size, 2)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pts = [(x, y)]
    seg_lengths, turns = [], []
    for s in range(n_seg):
        length = float(rng.uniform(lo, hi))
        seg_lengths.append(length)
        x += length * math.cos(heading)
        y += length * math.sin(heading)
        pts.append((x, y))
        if s < n_seg - 1:
            turn = float(rng.choice(np.asarray(template.turn_angles, dtype=np.float64)))
            if rng.random() < 0.5:
                turn = -turn
            turns.append(turn)
            heading += math.radians(turn)
    params = {"style": "angular", "segment_lengths": seg_lengths, "turns": turns}
    return np.asarray(pts, dtype=np.float64), params


def gen_organic_polyline(rng, template):
    """Meandering polyline: short steps with small continuous heading drift.

    One angular-variation magnitude is sampled per walk; every per-step
    heading change is then drawn uniformly within that magnitude.
    """
    step_lo, step_hi = template.step_size_range
    var_lo, var_hi = template.angular_variation_range
    variation = float(rng.uniform(var_lo, var_hi))
    n_steps = int(rng.integers(template.n_steps_range[0], template.n_steps_range[1] + 1))
    x, y = rng.uniform(0.0, template.canvas_size, 2)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pts = [(x, y)]
    steps, deltas = [], []
    for _ in range(n_steps):
        step = float(rng.uniform(step_lo, step_hi))
        steps.append(step)
        x += step * math.cos(heading)
        y += step * math.sin(heading)
        pts.append((x, y))
        delta = float(rng.uniform(-variation, variation))
        deltas.append(delta)
        heading += math.radians(delta)
    params = {
        "style": "organic",
        "variation": variation,
        "step_lengths": steps,
        "heading_deltas": deltas,
    }
    return np.asarray(pts, dtype=np.float64), params


def star_polygon(rng, size: int, n_vertices: int) -> list[tuple[float, float]]:
    """Closed simple ring: evenly spread angles with bounded jitter, jittered radii.

    Vertex ``k`` sits at angle ``(2*pi/n) * (k + 0.45*u_k)`` with ``u_k``
    uniform in (-1, 1), so every consecutive angular gap stays within
    ``(0.1, 1.9) * 2*pi/n``.  For n >= 4 all gaps are below pi, which makes
    each edge stay inside its own angular wedge around the center and rules
    out self-intersections; a triangle is simple regardless.
    """
    center = size / 2.0
    spacing = 2.0 * math.pi / n_vertices
    jitter = rng.uniform(-1.0, 1.0, n_vertices)
    angles = spacing * (np.arange(n_vertices) + 0.45 * jitter)
    radii = rng.uniform(0.35, 0.5, n_vertices) * size
    ring = [
        (center + r * math.cos(a), center + r * math.sin(a))
        for a, r in zip(angles, radii)
    ]
    ring.append(ring[0])
    return ring


def _ring_is_simple(ring) -> bool:
    """O(n^2) proper-intersection scan over non-adjacent edges."""
    edges = list(zip(ring[:-1], ring[1:]))
    n = len(edges)

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # first and last edge share the closing vertex
            a, b = edges[i]
            c, d = edges[j]
            if (
                orient(a, b, c) * orient(a, b, d) < 0
                and orient(c, d, a) * orient(c, d, b) < 0
            ):
                return False
    return True


def gen_polygon_patch(rng, size: int, n_vertices: int, max_tries: int = 10):
    """Random simple polygon rasterized onto a ``size`` x ``size`` mask.

    Candidates failing the simplicity check are re-sampled (star polygons
    pass by construction; the check guards refactors).
    """
    ring = star_polygon(rng, size, n_vertices)
    for _ in range(max_tries):
        if _ring_is_simple(ring):
            break
        ring = star_polygon(rng, size, n_vertices)
    template = RasterGrid(
        np.zeros((size, size), dtype=np.uint8), origin_y=float(size)
    )
    # local pixel frame is y-down; flip into the template's y-up CRS frame
    crs_ring = [(x, size - y) for x, y in ring]
    mask = rasterize(PolygonSet([PolyFeature(crs_ring)]), template)
    return mask.data.astype(bool), ring


@njit(cache=True)
def _stroke_kernel(out, pts, half_width):
    h, w = out.shape
    hw2 = half_width * half_width
    for k in range(pts.shape[0] - 1):
        x1 = pts[k, 0]
        y1 = pts[k, 1]
        x2 = pts[k + 1, 0]
        y2 = pts[k + 1, 1]
        lo_x = min(x1, x2) - half_width - 1.0
        hi_x = max(x1, x2) + half_width + 1.0
        lo_y = min(y1, y2) - half_width - 1.0
        hi_y = max(y1, y2) + half_width + 1.0
        j0 = max(0, int(math.floor(lo_x)))
        j1 = min(w, int(math.ceil(hi_x)) + 1)
        i0 = max(0, int(math.floor(lo_y)))
        i1 = min(h, int(math.ceil(hi_y)) + 1)
        dx = x2 - x1
        dy = y2 - y1
        seg2 = dx * dx + dy * dy
        for i in range(i0, i1):
            py = i + 0.5
            for j in range(j0, j1):
                if out[i, j]:
                    continue
                px = j + 0.5
                if seg2 == 0.0:
                    ex = px - x1
                    ey = py - y1
                else:
                    t = ((px - x1) * dx + (py - y1) * dy) / seg2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    ex = px - (x1 + t * dx)
                    ey = py - (y1 + t * dy)
                if ex * ex + ey * ey <= hw2:
                    out[i, j] = 1


def stroke_polyline(canvas_shape, points: np.ndarray, width: float) -> np.ndarray:
    """Render a polyline with round caps and joins as a binary mask.

    A pixel is foreground iff the Euclidean distance from its center to the
    polyline is at most ``width / 2`` (computed exactly per segment).
    """
    out = np.zeros(canvas_shape, dtype=np.uint8)
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.shape[0] >= 2 and width > 0:
        _stroke_kernel(out, pts, width / 2.0)
    return out
