"""Input validation helpers shared across the toolkit.

All raster kernels funnel their inputs through these checkers so error
messages are uniform and array contracts (dtype, value range, alignment)
are enforced in exactly one place.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_binary",
    "check_class",
    "check_float_raster",
    "check_aligned",
    "check_positive",
]


def check_binary(arr, name: str = "mask") -> np.ndarray:
    """Validate a binary mask and return it as a C-contiguous uint8 array.

    Accepts bool or integer arrays with values in {0, 1}.
    """
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype == bool:
        return np.ascontiguousarray(a, dtype=np.uint8)
    a = np.ascontiguousarray(a)
    if not np.issubdtype(a.dtype, np.integer):
        raise ValueError(f"{name} must be boolean or integer, got {a.dtype}")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError(f"{name} must contain only 0/1 values")
    return a.astype(np.uint8, copy=False)


def check_class(arr, n_classes: int = 3, name: str = "class mask") -> np.ndarray:
    """Validate a class-label raster with values in {0, .., n_classes-1}."""
    a = np.ascontiguousarray(arr)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.integer):
        raise ValueError(f"{name} must be integer, got {a.dtype}")
    if a.size and (a.min() < 0 or a.max() >= n_classes):
        raise ValueError(f"{name} values must lie in [0, {n_classes - 1}]")
    return a.astype(np.uint8, copy=False)


def check_float_raster(arr, name: str = "raster") -> np.ndarray:
    """Validate a float raster and return it as C-contiguous float32."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return np.ascontiguousarray(a, dtype=np.float32)


def check_aligned(a, b, name_a: str = "a", name_b: str = "b") -> None:
    """Require two RasterGrids to share grid geometry exactly.

    Alignment means identical shape, origin, pixel size and CRS; pixel (i, j)
    in one raster then refers to the same ground location in the other.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"{name_a} and {name_b} differ in shape: "
            f"{a.data.shape} vs {b.data.shape}"
        )
    if (a.origin_x, a.origin_y) != (b.origin_x, b.origin_y):
        raise ValueError(f"{name_a} and {name_b} differ in origin")
    if a.pixel_size != b.pixel_size:
        raise ValueError(f"{name_a} and {name_b} differ in pixel size")
    if a.epsg != b.epsg:
        raise ValueError(f"{name_a} and {name_b} differ in CRS (epsg)")


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
