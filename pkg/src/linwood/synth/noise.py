"""Value-noise fBm fields and quantile-thresholded patch masks."""

from __future__ import annotations

import numpy as np

__all__ = [
    "value_noise",
    "fbm_field",
    "gen_fbm_patch",
    "gen_fbm_patch_with_params",
]


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(rng, shape: tuple[int, int], cell: float) -> np.ndarray:
    """Bilinear value noise: random lattice values, smoothstep interpolation.

    ``cell`` is the lattice spacing in pixels (may be fractional).
    """
    h, w = shape
    cell = max(float(cell), 1.0)
    gh = int(np.ceil(h / cell)) + 2
    gw = int(np.ceil(w / cell)) + 2
    lattice = rng.random((gh, gw))
    ys = np.arange(h, dtype=np.float64) / cell
    xs = np.arange(w, dtype=np.float64) / cell
    iy = ys.astype(np.int64)
    ix = xs.astype(np.int64)
    ty = _smoothstep(ys - iy)[:, None]
    tx = _smoothstep(xs - ix)[None, :]
    v00 = lattice[iy[:, None], ix[None, :]]
    v01 = lattice[iy[:, None], ix[None, :] + 1]
    v10 = lattice[iy[:, None] + 1, ix[None, :]]
    v11 = lattice[iy[:, None] + 1, ix[None, :] + 1]
    top = v00 * (1.0 - tx) + v01 * tx
    bottom = v10 * (1.0 - tx) + v11 * tx
    return top * (1.0 - ty) + bottom * ty


def fbm_field(
    rng,
    shape: tuple[int, int],
    octaves: int,
    base_cell: float | None = None,
    lacunarity: float = 2.0,
    gain: float = 0.5,
) -> np.ndarray:
    """Sum of ``octaves`` value-noise layers, each at double frequency and
    half amplitude of the previous one."""
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    h, w = shape
    if base_cell is None:
        base_cell = max(min(h, w) / 4.0, 2.0)
    out = np.zeros(shape, dtype=np.float64)
    amp = 1.0
    cell = float(base_cell)
    for _ in range(octaves):
        out += amp * value_noise(rng, shape, cell)
        amp *= gain
        cell /= lacunarity
    return out


def gen_fbm_patch(
    rng,
    size: int,
    coverage: float,
    octaves: int,
    base_cell: float | None = None,
) -> np.ndarray:
    """Binary organic patch: a compact blob with a noise-roughened boundary.

    A radial falloff centered on the tile is perturbed by an fBm detail
    field (stronger roughening at higher octave counts), then thresholded
    at the field's ``1 - coverage`` quantile, so the foreground fraction
    lands on the coverage target (within tie-breaking noise, well inside
    +/-2 %).  The falloff keeps the level set a single center-heavy blob
    rather than the wandering ridge bands a bare noise threshold produces.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if coverage <= 0.0:
        return np.zeros((size, size), dtype=bool)
    if coverage >= 1.0:
        return np.ones((size, size), dtype=bool)
    noise = fbm_field(rng, (size, size), octaves, base_cell=base_cell)
    lo, hi = noise.min(), noise.max()
    if hi > lo:
        noise = (noise - lo) / (hi - lo)
    else:
        noise = np.zeros_like(noise)
    half = (size - 1) / 2.0
    axis = (np.arange(size) - half) / max(half, 0.5)
    rr = np.hypot(axis[:, None], axis[None, :])
    field = (1.0 - rr) + 0.55 * noise
    threshold = np.quantile(field, 1.0 - coverage)
    return field >= threshold


def gen_fbm_patch_with_params(rng, size, coverage, octaves, base_cell=None):
    """Like :func:`gen_fbm_patch`, also returning the achieved coverage."""
    mask = gen_fbm_patch(rng, size, coverage, octaves, base_cell=base_cell)
    return mask, float(mask.mean())
