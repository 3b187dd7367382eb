"""Linear woody feature mapping toolkit.

Generate synthetic woody-vegetation scenes, build binary woody masks from
height/NDVI/building rasters, separate linear from patchy features with a
pluggable separator, and evaluate results with pixel and skeleton-tolerance
metrics.
"""

from linwood.metrics import (
    EvalReport,
    SkeletonMetricCurve,
    pixel_metrics,
    report,
    skeleton_curve,
)
from linwood.raster import (
    GridCatalog,
    PolyFeature,
    PolygonSet,
    RasterGrid,
    rasterize,
    read_raster,
    resample_mean,
    write_raster,
)
from linwood.tiling import plan_chips, postprocess, run, vectorize
from linwood.separator import (
    BaselineSeparator,
    ExternalSeparator,
    SeparatorInput,
    SeparatorOutput,
    baseline_separate,
    parse_separator_spec,
    prepare_input,
    skeleton_refine,
)

__version__ = "0.1.0"

__all__ = [
    "GridCatalog",
    "PolyFeature",
    "PolygonSet",
    "RasterGrid",
    "rasterize",
    "read_raster",
    "resample_mean",
    "write_raster",
    "BaselineSeparator",
    "ExternalSeparator",
    "SeparatorInput",
    "SeparatorOutput",
    "baseline_separate",
    "parse_separator_spec",
    "prepare_input",
    "skeleton_refine",
    "EvalReport",
    "SkeletonMetricCurve",
    "pixel_metrics",
    "report",
    "skeleton_curve",
    "plan_chips",
    "postprocess",
    "run",
    "vectorize",
    "__version__",
]
