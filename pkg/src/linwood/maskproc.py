"""Binary woody-vegetation mask production from heterogeneous inputs.

The conditional workflow removes terrain with a height threshold on the
normalized surface model, then — for tiles imaged once inside the leaf-on
window — tightens the mask with a per-tile NDVI threshold found from the
histogram's vegetation/non-vegetation peak structure, and finally erases
building footprints.  A plain canopy-height threshold covers inputs that
already encode vegetation height.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy import signal as _signal

from linwood.raster import RasterGrid
from linwood.validation import check_aligned, check_binary

__all__ = [
    "NDVI_CLIP",
    "N_BINS",
    "VEG_BOUNDARY_NDVI",
    "DEFAULT_HEIGHT_THRESHOLD",
    "LEAF_ON_WINDOWS",
    "TileMeta",
    "Histogram",
    "Peak",
    "PeakSet",
    "ThresholdDecision",
    "ndsm",
    "height_mask",
    "chm_mask",
    "ndvi",
    "histogram_ndvi",
    "find_peaks",
    "detect_threshold",
    "leaf_on",
    "build_woody_mask",
]

#: NDVI clip range applied before histogramming
NDVI_CLIP = (-0.5, 1.0)
#: number of histogram bins over the clip range
N_BINS = 255
#: NDVI separating vegetation peaks (center strictly above) from the rest
VEG_BOUNDARY_NDVI = 0.13
#: default vegetation height cut in meters
DEFAULT_HEIGHT_THRESHOLD = 2.0
#: named leaf-on windows (month-day bounds, inclusive)
LEAF_ON_WINDOWS = {
    "default": ("05-15", "09-15"),
    "extended": ("04-15", "09-15"),
}

_MIN_PEAK_DISTANCE = 10
_PROMINENCE_FRACTION = 0.2
_PERCENTILE = 3.0


def _parse_month_day(text: str) -> tuple[int, int]:
    try:
        month, day = (int(p) for p in text.split("-"))
        date(2001, month, day)  # leap-safe probe year
    except (ValueError, TypeError) as exc:
        raise ValueError(f"bad month-day {text!r}; expected 'MM-DD'") from exc
    return month, day


@dataclass(frozen=True)
class TileMeta:
    """Acquisition metadata of one tile: dates plus the leaf-on window."""

    acquisition_dates: tuple[date, ...]
    leaf_on_window: tuple[str, str] = LEAF_ON_WINDOWS["default"]

    def __post_init__(self):
        object.__setattr__(
            self, "acquisition_dates", tuple(self.acquisition_dates)
        )
        object.__setattr__(self, "leaf_on_window", tuple(self.leaf_on_window))
        for d in self.acquisition_dates:
            if not isinstance(d, date):
                raise ValueError(f"acquisition date {d!r} is not a date")
        start, end = (_parse_month_day(t) for t in self.leaf_on_window)
        if not start < end:
            raise ValueError(
                f"leaf-on window start {self.leaf_on_window[0]} must precede "
                f"end {self.leaf_on_window[1]} within the year"
            )

    @classmethod
    def from_json(cls, text: str) -> "TileMeta":
        doc = json.loads(text)
        dates = tuple(
            date.fromisoformat(d) for d in doc.get("acquisition_dates", [])
        )
        window = tuple(doc.get("leaf_on_window", LEAF_ON_WINDOWS["default"]))
        return cls(acquisition_dates=dates, leaf_on_window=window)

    def to_json(self) -> str:
        return json.dumps(
            {
                "acquisition_dates": [d.isoformat() for d in self.acquisition_dates],
                "leaf_on_window": list(self.leaf_on_window),
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class Histogram:
    """Fixed-width histogram over the NDVI clip range."""

    bin_edges: np.ndarray  # N_BINS + 1 edges
    counts: np.ndarray  # N_BINS non-negative integers
    clip_range: tuple[float, float] = NDVI_CLIP

    def __post_init__(self):
        if len(self.counts) != N_BINS or len(self.bin_edges) != N_BINS + 1:
            raise ValueError(
                f"histogram needs {N_BINS} counts and {N_BINS + 1} edges"
            )
        if (np.asarray(self.counts) < 0).any():
            raise ValueError("histogram counts must be non-negative")

    @property
    def centers(self) -> np.ndarray:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        return (edges[:-1] + edges[1:]) / 2.0

    @property
    def n_samples(self) -> int:
        return int(np.asarray(self.counts).sum())


@dataclass(frozen=True)
class Peak:
    index: int
    center: float
    height: float
    prominence: float


@dataclass(frozen=True)
class PeakSet:
    """Detected histogram peaks, partitionable at the vegetation boundary."""

    peaks: tuple[Peak, ...]

    @property
    def vegetation(self) -> tuple[Peak, ...]:
        return tuple(p for p in self.peaks if p.center > VEG_BOUNDARY_NDVI)

    @property
    def non_vegetation(self) -> tuple[Peak, ...]:
        return tuple(p for p in self.peaks if p.center <= VEG_BOUNDARY_NDVI)

    def __len__(self) -> int:
        return len(self.peaks)


@dataclass(frozen=True)
class ThresholdDecision:
    """Outcome of the per-tile NDVI threshold search.

    ``kind`` is ``valley`` (minimum-count bin between the two peak groups),
    ``percentile3`` (lower-tail fallback when only vegetation peaks exist),
    or ``none``; ``sample_pass`` records which sampling pass decided
    (``height-masked`` or ``full-raster``).  For valley decisions ``bounds``
    keeps the two defining peak centers.
    """

    kind: str
    threshold: float | None
    sample_pass: str
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("valley", "percentile3", "none"):
            raise ValueError(f"bad decision kind {self.kind!r}")
        if self.sample_pass not in ("height-masked", "full-raster"):
            raise ValueError(f"bad sample pass {self.sample_pass!r}")
        if (self.threshold is None) != (self.kind == "none"):
            raise ValueError("threshold must be set exactly when kind != none")
        if self.kind == "valley":
            lo, hi = self.bounds
            if not lo < self.threshold < hi:
                raise ValueError(
                    f"valley threshold {self.threshold} must lie strictly "
                    f"between the defining peak centers {self.bounds}"
                )

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "pass": self.sample_pass,
        }


# ---------------------------------------------------------------------------
# raster operations


def ndsm(dsm: RasterGrid, dtm: RasterGrid) -> RasterGrid:
    """Normalized surface model: per-pixel ``dsm - dtm``."""
    check_aligned(dsm, dtm, "dsm", "dtm")
    out = dsm.data.astype(np.float32) - dtm.data.astype(np.float32)
    return dsm.with_data(out, band="height_f32")


def height_mask(
    ndsm_grid: RasterGrid, threshold: float = DEFAULT_HEIGHT_THRESHOLD
) -> RasterGrid:
    """Binary mask of pixels at least ``threshold`` meters tall."""
    out = (ndsm_grid.data >= threshold).astype(np.uint8)
    return ndsm_grid.with_data(out, band="mask8")


def chm_mask(chm: RasterGrid, threshold: float) -> RasterGrid:
    """Binary mask from a canopy height model: ``chm >= threshold``."""
    return height_mask(chm, threshold)


def ndvi(red: RasterGrid, nir: RasterGrid) -> RasterGrid:
    """Normalized difference of near-infrared and red; 0 where both are 0."""
    check_aligned(red, nir, "red", "nir")
    r = red.data.astype(np.float64)
    n = nir.data.astype(np.float64)
    denom = n + r
    out = np.zeros(r.shape, dtype=np.float64)
    np.divide(n - r, denom, out=out, where=denom != 0)
    return red.with_data(out.astype(np.float32), band="index_f32")


def _values_of(values) -> np.ndarray:
    return values.data if isinstance(values, RasterGrid) else np.asarray(values)


def histogram_ndvi(values, sample_mask=None) -> Histogram:
    """Histogram of (optionally mask-sampled) values over the clip range.

    Values are clipped to the range before binning, so every sampled pixel
    is counted; the counts therefore sum to the sample size.
    """
    data = _values_of(values)
    if sample_mask is not None:
        if isinstance(values, RasterGrid) and isinstance(sample_mask, RasterGrid):
            check_aligned(values, sample_mask, "values", "sample_mask")
        mask = check_binary(_values_of(sample_mask), "sample_mask")
        data = data[mask == 1]
    data = np.asarray(data, dtype=np.float64).ravel()
    if not np.isfinite(data).all():
        raise ValueError("sampled values must be finite")
    clipped = np.clip(data, *NDVI_CLIP)
    counts, edges = np.histogram(clipped, bins=N_BINS, range=NDVI_CLIP)
    return Histogram(bin_edges=edges, counts=counts.astype(np.int64))


def _plateau_maxima(c: np.ndarray) -> np.ndarray:
    """Strict local maxima; a flat plateau counts once at its floor-middle.

    Run-length encodes the signal and keeps every interior run higher than
    both neighboring runs; boundary runs can never qualify.
    """
    n = c.size
    if n < 3:
        return np.empty(0, dtype=np.int64)
    change = np.flatnonzero(np.diff(c) != 0) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [n - 1]))  # inclusive run ends
    vals = c[starts]
    keep = np.zeros(starts.size, dtype=bool)
    if starts.size >= 3:
        keep[1:-1] = (vals[1:-1] > vals[:-2]) & (vals[1:-1] > vals[2:])
    return ((starts + ends) // 2)[keep].astype(np.int64)


def _distance_filter(idx: np.ndarray, heights: np.ndarray, distance: int) -> np.ndarray:
    """Drop peaks closer than ``distance`` to a taller surviving peak.

    Greedy by descending height; equal heights are processed right-to-left,
    a fixed rule so results never depend on sort implementation details.
    """
    order = np.lexsort((idx, heights))[::-1]
    keep = np.ones(idx.size, dtype=bool)
    for k in order:
        if not keep[k]:
            continue
        close = np.abs(idx - idx[k]) < distance
        close[k] = False
        keep[close] = False
    return idx[np.sort(np.flatnonzero(keep))]


def find_peaks(hist: Histogram) -> PeakSet:
    """Histogram peaks with relative prominence and minimum separation.

    A bin survives when it is a local maximum, it is at least 10 bins from
    every taller surviving peak, and its prominence (standard
    lowest-contour definition over the full histogram) reaches 20 % of the
    count range.
    """
    counts = np.asarray(hist.counts, dtype=np.float64)
    min_prominence = _PROMINENCE_FRACTION * (counts.max() - counts.min())
    maxima = _plateau_maxima(counts)
    survivors = _distance_filter(maxima, counts[maxima], _MIN_PEAK_DISTANCE)
    if survivors.size:
        proms = _signal.peak_prominences(counts, survivors)[0]
    else:
        proms = np.empty(0)
    centers = hist.centers
    peaks = tuple(
        Peak(
            index=int(i),
            center=float(centers[i]),
            height=float(counts[i]),
            prominence=float(p),
        )
        for i, p in zip(survivors, proms)
        if p >= min_prominence
    )
    return PeakSet(peaks=peaks)


def _attempt_decision(values: np.ndarray, sample_pass: str):
    """One decision pass over a sampled value set; None defers to the next."""
    hist = histogram_ndvi(values)
    peaks = find_peaks(hist)
    veg = peaks.vegetation
    non_veg = peaks.non_vegetation
    if veg and non_veg:
        left = max(non_veg, key=lambda p: p.index)
        right = min(veg, key=lambda p: p.index)
        interior = np.asarray(hist.counts[left.index + 1 : right.index])
        # leftmost minimum-count bin: argmin takes the first on ties
        offset = int(np.argmin(interior))
        valley_index = left.index + 1 + offset
        return ThresholdDecision(
            kind="valley",
            threshold=float(hist.centers[valley_index]),
            sample_pass=sample_pass,
            bounds=(left.center, right.center),
        )
    if veg:
        clipped = np.clip(np.asarray(values, dtype=np.float64), *NDVI_CLIP)
        return ThresholdDecision(
            kind="percentile3",
            threshold=float(np.percentile(clipped, _PERCENTILE)),
            sample_pass=sample_pass,
        )
    return None


def detect_threshold(
    ndvi_raster: RasterGrid, height_mask_grid: RasterGrid
) -> ThresholdDecision:
    """Two-pass NDVI threshold search.

    Pass 1 samples NDVI under the height mask; when it finds both
    vegetation and non-vegetation peaks the threshold is the leftmost
    minimum-count bin center strictly between the innermost pair, and with
    only vegetation peaks it falls back to the sample's 3rd percentile
    (linear interpolation).  Otherwise pass 2 repeats the search over the
    full raster; failing that too, the decision kind is ``none``.
    """
    check_aligned(ndvi_raster, height_mask_grid, "ndvi", "height_mask")
    mask = check_binary(height_mask_grid.data, "height_mask")
    sampled = ndvi_raster.data[mask == 1]
    decision = _attempt_decision(sampled, "height-masked")
    if decision is not None:
        return decision
    decision = _attempt_decision(ndvi_raster.data.ravel(), "full-raster")
    if decision is not None:
        return decision
    return ThresholdDecision(kind="none", threshold=None, sample_pass="full-raster")


def leaf_on(meta: TileMeta) -> bool:
    """True iff the tile has exactly one acquisition inside the window.

    Window bounds are inclusive; tiles with several acquisition dates are
    always treated as unusable for NDVI thresholding.
    """
    if len(meta.acquisition_dates) != 1:
        return False
    d = meta.acquisition_dates[0]
    start, end = (_parse_month_day(t) for t in meta.leaf_on_window)
    return start <= (d.month, d.day) <= end


def build_woody_mask(
    height_mask_grid: RasterGrid,
    building_mask: RasterGrid,
    decision: ThresholdDecision,
    ndvi_1m: RasterGrid | None = None,
) -> RasterGrid:
    """Combine height, NDVI, and inverted building masks into the output.

    Without a usable threshold (kind ``none``) the result is the height
    mask minus buildings; with one, pixels must additionally reach the
    NDVI threshold.  The output is always a subset of the height mask and
    never intersects the building mask.
    """
    check_aligned(height_mask_grid, building_mask, "height_mask", "building_mask")
    hm = check_binary(height_mask_grid.data, "height_mask")
    bm = check_binary(building_mask.data, "building_mask")
    keep = (hm == 1) & (bm == 0)
    if decision.kind != "none":
        if ndvi_1m is None:
            raise ValueError(
                "an NDVI raster is required when the decision has a threshold"
            )
        check_aligned(height_mask_grid, ndvi_1m, "height_mask", "ndvi")
        keep &= ndvi_1m.data >= decision.threshold
    return height_mask_grid.with_data(keep.astype(np.uint8), band="mask8")
