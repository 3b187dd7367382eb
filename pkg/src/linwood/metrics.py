"""Evaluation metrics: pixel-wise scores and skeleton tolerance curves.

Pixel metrics are the standard confusion-matrix scores on aligned binary
grids.  The skeleton metrics thin both masks, then score how much of each
skeleton lies within a spatial tolerance of the other using distance-map
lookups, sweeping the tolerance from 0 to ``tau_max`` pixels and
summarizing each curve by its normalized area (the mean over the integer
tolerance samples).  Reports keep every site separate: site quality is
not comparable across reference sources, so nothing is averaged.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from linwood.morphology import distance_transform, skeletonize
from linwood.raster import RasterGrid
from linwood.validation import check_aligned, check_binary

DEFAULT_TAU_MAX = 12


# ---------------------------------------------------------------------------
# pixel-wise metrics


def _ratio(num: int, den: int, empty: float) -> float:
    return float(num) / float(den) if den else empty


def pixel_metrics(gt: RasterGrid, pred: RasterGrid) -> dict:
    """Precision, recall, F1, and IoU of ``pred`` against ``gt``.

    Empty denominators follow the agreement convention: two empty masks
    agree perfectly (all four scores 1); a ratio whose denominator is
    empty against a non-empty counterpart scores 0.
    """
    g = check_binary(gt.data, name="gt").astype(bool)
    p = check_binary(pred.data, name="pred").astype(bool)
    check_aligned(gt, pred, name_a="gt", name_b="pred")
    tp = int((g & p).sum())
    fp = int((~g & p).sum())
    fn = int((g & ~p).sum())
    both_empty = not (g.any() or p.any())
    precision = _ratio(tp, tp + fp, 1.0 if both_empty else 0.0)
    recall = _ratio(tp, tp + fn, 1.0 if both_empty else 0.0)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, 1.0 if both_empty else 0.0)
    iou = _ratio(tp, tp + fp + fn, 1.0 if both_empty else 0.0)
    return {"precision": precision, "recall": recall, "f1": f1, "iou": iou}


# ---------------------------------------------------------------------------
# skeleton tolerance curves


@dataclass(frozen=True)
class SkeletonMetricCurve:
    """Precision/recall/F1 as functions of the matching tolerance.

    ``tau_values`` are the integer tolerances 0..tau_max in pixel units of
    the common grid; each score array has one entry per tolerance; the
    ``auc_*`` scalars are the curve means over those samples.
    """

    tau_values: tuple[int, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    auc_precision: float
    auc_recall: float
    auc_f1: float

    def __post_init__(self) -> None:
        n = len(self.tau_values)
        if not (len(self.precision) == len(self.recall) == len(self.f1) == n):
            raise ValueError("curve arrays must match tau_values in length")
        for name in ("precision", "recall", "f1"):
            vals = getattr(self, name)
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"{name} values must lie in [0, 1]")
            if name != "f1" and any(
                a > b + 1e-12 for a, b in zip(vals, vals[1:])
            ):
                raise ValueError(f"{name} must be non-decreasing in tau")
        for name in ("auc_precision", "auc_recall", "auc_f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {
            "tau_values": list(self.tau_values),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "auc_precision": self.auc_precision,
            "auc_recall": self.auc_recall,
            "auc_f1": self.auc_f1,
        }


def _match_fractions(
    sample_skel: np.ndarray, lookup_dist: np.ndarray, taus: np.ndarray
) -> np.ndarray:
    """Fraction of skeleton pixels whose lookup distance is within each tau."""
    dists = lookup_dist[sample_skel]
    total = dists.size
    return np.array(
        [float((dists <= t).sum()) / total for t in taus], dtype=np.float64
    )


def skeleton_curve(
    gt: RasterGrid, pred: RasterGrid, tau_max: int = DEFAULT_TAU_MAX
) -> SkeletonMetricCurve:
    """Tolerance sweep of skeleton agreement between two binary masks.

    Both masks are thinned; recall(tau) is the fraction of ground-truth
    skeleton pixels with a predicted skeleton pixel within tau (Euclidean,
    pixel units), precision(tau) the converse, F1 their harmonic mean.
    Two empty skeletons agree perfectly (all scores 1 at every tau);
    exactly one empty scores 0 everywhere.
    """
    if tau_max < 0:
        raise ValueError(f"tau_max must be non-negative, got {tau_max}")
    check_binary(gt.data, name="gt")
    check_binary(pred.data, name="pred")
    check_aligned(gt, pred, name_a="gt", name_b="pred")
    taus = np.arange(tau_max + 1)
    skel_gt = skeletonize(gt).data.astype(bool)
    skel_pred = skeletonize(pred).data.astype(bool)
    gt_empty = not skel_gt.any()
    pred_empty = not skel_pred.any()
    if gt_empty and pred_empty:
        ones = np.ones(taus.size)
        precision = recall = f1 = ones
    elif gt_empty or pred_empty:
        zeros = np.zeros(taus.size)
        precision = recall = f1 = zeros
    else:
        dist_to_gt = distance_transform(
            gt.with_data(skel_gt.astype(np.uint8), "mask8")
        ).data
        dist_to_pred = distance_transform(
            pred.with_data(skel_pred.astype(np.uint8), "mask8")
        ).data
        recall = _match_fractions(skel_gt, dist_to_pred, taus)
        precision = _match_fractions(skel_pred, dist_to_gt, taus)
        denom = precision + recall
        f1 = np.divide(
            2.0 * precision * recall,
            denom,
            out=np.zeros_like(denom),
            where=denom > 0,
        )
    return SkeletonMetricCurve(
        tau_values=tuple(int(t) for t in taus),
        precision=tuple(float(v) for v in precision),
        recall=tuple(float(v) for v in recall),
        f1=tuple(float(v) for v in f1),
        auc_precision=float(np.mean(precision)),
        auc_recall=float(np.mean(recall)),
        auc_f1=float(np.mean(f1)),
    )


# ---------------------------------------------------------------------------
# per-site reports


@dataclass(frozen=True)
class SiteEval:
    """Scores of one product on one evaluation site."""

    site_id: str
    product: str
    resolution: float
    pixel: dict
    skeleton: SkeletonMetricCurve

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "product": self.product,
            "resolution": self.resolution,
            "pixel": dict(self.pixel),
            "skeleton": self.skeleton.to_dict(),
        }


@dataclass(frozen=True)
class EvalReport:
    """Independent per-site, per-product entries; never an aggregate row."""

    entries: tuple[SiteEval, ...]
    tau_max: int

    def to_dict(self) -> dict:
        return {
            "tau_max": self.tau_max,
            "entries": [e.to_dict() for e in self.entries],
        }


def evaluate_site(
    site_id: str,
    product: str,
    gt: RasterGrid,
    pred: RasterGrid,
    tau_max: int = DEFAULT_TAU_MAX,
) -> SiteEval:
    """All metrics of one (site, product) pair on its common grid."""
    return SiteEval(
        site_id=str(site_id),
        product=str(product),
        resolution=float(gt.pixel_size),
        pixel=pixel_metrics(gt, pred),
        skeleton=skeleton_curve(gt, pred, tau_max),
    )


def report(
    sites,
    tau_max: int = DEFAULT_TAU_MAX,
    plot_dir=None,
) -> EvalReport:
    """Evaluate ``(site_id, product, gt, pred)`` tuples site by site.

    Every tuple yields its own report entry; nothing is pooled or averaged
    across sites.  With ``plot_dir``, one SVG per site is written showing
    the tolerance curves of that site's products.
    """
    entries = tuple(
        evaluate_site(site_id, product, gt, pred, tau_max)
        for site_id, product, gt, pred in sites
    )
    rep = EvalReport(entries=entries, tau_max=tau_max)
    if plot_dir is not None:
        plot_curves(rep, plot_dir)
    return rep


def write_report(rep: EvalReport, path) -> None:
    """Serialize a report to JSON (stable key order, trailing newline)."""
    with open(str(path), "w", encoding="ascii") as f:
        json.dump(rep.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


def read_report(path) -> dict:
    with open(str(path), "r", encoding="ascii") as f:
        return json.load(f)


def plot_curves(rep: EvalReport, out_dir) -> list:
    """One SVG per site: its products' F1 tolerance curves, side by side.

    Returns the written paths.  Sites stay in separate figures so no
    visual element mixes data across sites.
    """
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    sites: dict[str, list[SiteEval]] = {}
    for entry in rep.entries:
        sites.setdefault(entry.site_id, []).append(entry)
    written = []
    for site_id, entries in sites.items():
        fig, ax = plt.subplots(figsize=(5, 4))
        for entry in entries:
            ax.plot(
                entry.skeleton.tau_values,
                entry.skeleton.f1,
                marker="o",
                markersize=3,
                label=f"{entry.product} (AUC {entry.skeleton.auc_f1:.3f})",
            )
        ax.set_xlabel("tolerance [px]")
        ax.set_ylabel("skeleton F1")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(site_id)
        ax.legend(loc="lower right", fontsize=8)
        ax.grid(True, alpha=0.3)
        path = os.path.join(out_dir, f"{site_id}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written


__all__ = [
    "DEFAULT_TAU_MAX",
    "SkeletonMetricCurve",
    "SiteEval",
    "EvalReport",
    "pixel_metrics",
    "skeleton_curve",
    "evaluate_site",
    "report",
    "write_report",
    "read_report",
    "plot_curves",
]
