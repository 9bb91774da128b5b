"""Segmentation evaluation: pixel-level IoU/nIoU, object-level Pd/Fa with
connected-component centroid matching, and ROC curves.

IoU accumulates intersections and unions over the whole dataset before
dividing; nIoU averages the per-sample ratios.  A ground-truth target counts
as detected when some predicted component's centroid lies strictly within
``match_radius`` (default 3 px, Euclidean) of its centroid, matched greedily
nearest-first one-to-one.  Fa is the rate of unmatched predicted-component
pixels over all image pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Component:
    label: int
    pixels: int
    centroid: tuple[float, float]


@dataclass
class MetricsReport:
    iou: float
    niou: float
    pd: float
    fa: float
    roc: list[tuple[float, float]] = field(default_factory=list)
    auc: float = 0.0
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": "mimnet-metrics/1",
            "n_samples": self.n_samples,
            "iou": self.iou,
            "niou": self.niou,
            "pd": self.pd,
            "fa": self.fa,
            "fa_per_million": self.fa * 1e6,
            "roc": [[float(f), float(t)] for f, t in self.roc],
            "auc": self.auc,
        }

    def summary_lines(self) -> list[str]:
        return [
            f"IoU:  {self.iou:.4f}",
            f"nIoU: {self.niou:.4f}",
            f"Pd:   {self.pd:.4f}",
            f"Fa:   {self.fa * 1e6:.3f} x 1e-6",
            f"AUC:  {self.auc:.4f}",
        ]


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Pixels >= threshold become 1 (ties go to the positive class)."""
    return (np.asarray(probs) >= threshold).astype(np.uint8)


def _as_mask_list(masks) -> list[np.ndarray]:
    if isinstance(masks, np.ndarray) and masks.ndim == 2:
        masks = [masks]
    return [np.asarray(m) for m in masks]


def _check_pairs(preds, gts):
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ValueError(f"mask shape mismatch: {p.shape} vs {g.shape}")


def iou(preds, gts) -> float:
    """Dataset-accumulated intersection over union."""
    preds, gts = _as_mask_list(preds), _as_mask_list(gts)
    _check_pairs(preds, gts)
    inter = sum(int(np.sum((p > 0) & (g > 0))) for p, g in zip(preds, gts))
    union = sum(int(np.sum((p > 0) | (g > 0))) for p, g in zip(preds, gts))
    if union == 0:
        warnings.warn("IoU over an all-empty union; defined as 1", stacklevel=2)
        return 1.0
    return inter / union


def niou(preds, gts) -> float:
    """Mean of per-sample IoU."""
    preds, gts = _as_mask_list(preds), _as_mask_list(gts)
    _check_pairs(preds, gts)
    if not preds:
        raise ValueError("niou needs at least one sample")
    vals = []
    for p, g in zip(preds, gts):
        inter = int(np.sum((p > 0) & (g > 0)))
        union = int(np.sum((p > 0) | (g > 0)))
        if union == 0:
            warnings.warn("per-sample IoU with empty union; sample contributes 1", stacklevel=2)
            vals.append(1.0)
        else:
            vals.append(inter / union)
    return float(np.mean(vals))


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Label a binary mask and return per-component pixel counts and centroids.

    Centroids are the mean (row, col) coordinate of each component's pixels.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask) > 0
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if connectivity == 8:
        offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        offsets = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    comps: list[Component] = []
    next_label = 0
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or labels[si, sj]:
                continue
            next_label += 1
            stack = [(si, sj)]
            labels[si, sj] = next_label
            pixels = []
            while stack:
                i, j = stack.pop()
                pixels.append((i, j))
                for di, dj in offsets:
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not labels[ni, nj]:
                        labels[ni, nj] = next_label
                        stack.append((ni, nj))
            arr = np.array(pixels, dtype=np.float64)
            comps.append(Component(label=next_label, pixels=len(pixels),
                                   centroid=(float(arr[:, 0].mean()), float(arr[:, 1].mean()))))
    return comps


def _match_components(pred_comps, gt_comps, match_radius: float):
    """Greedy nearest-first one-to-one matching under a strict radius."""
    candidates = []
    for gi, g in enumerate(gt_comps):
        for pi, p in enumerate(pred_comps):
            dist = float(np.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1]))
            if dist < match_radius:
                candidates.append((dist, gi, pi))
    candidates.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    for _, gi, pi in candidates:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
    return used_gt, used_pred


def pd_fa(preds, gts, match_radius: float = 3.0, connectivity: int = 8) -> tuple[float, float]:
    """Object-level detection probability and false-alarm pixel rate."""
    preds, gts = _as_mask_list(preds), _as_mask_list(gts)
    _check_pairs(preds, gts)
    total_gt = 0
    detected = 0
    false_pixels = 0
    total_pixels = 0
    for p, g in zip(preds, gts):
        pred_comps = connected_components(p, connectivity)
        gt_comps = connected_components(g, connectivity)
        used_gt, used_pred = _match_components(pred_comps, gt_comps, match_radius)
        total_gt += len(gt_comps)
        detected += len(used_gt)
        false_pixels += sum(c.pixels for i, c in enumerate(pred_comps) if i not in used_pred)
        total_pixels += p.size
    pd = detected / total_gt if total_gt else 1.0
    fa = false_pixels / total_pixels if total_pixels else 0.0
    return pd, fa


def roc_curve(prob_maps, gts, n_thresholds: int = 33) -> tuple[list[tuple[float, float]], float]:
    """Pixel-level (FPR, TPR) at evenly-spaced thresholds plus trapezoidal AUC.

    Endpoints (0,0) and (1,1) are always included.
    """
    if n_thresholds < 2:
        raise ValueError("roc_curve needs at least 2 thresholds")
    prob_maps, gts = _as_mask_list(prob_maps), _as_mask_list(gts)
    _check_pairs(prob_maps, gts)
    pos = sum(int(np.sum(g > 0)) for g in gts)
    neg = sum(int(g.size - np.sum(g > 0)) for g in gts)
    points = {(0.0, 0.0), (1.0, 1.0)}
    for t in np.linspace(0.0, 1.0, n_thresholds):
        tp = sum(int(np.sum((p >= t) & (g > 0))) for p, g in zip(prob_maps, gts))
        fp = sum(int(np.sum((p >= t) & (g == 0))) for p, g in zip(prob_maps, gts))
        tpr = tp / pos if pos else 1.0
        fpr = fp / neg if neg else 0.0
        points.add((float(fpr), float(tpr)))
    curve = sorted(points)
    xs = np.array([f for f, _ in curve])
    ys = np.array([t for _, t in curve])
    auc = float(np.trapezoid(ys, xs))
    return curve, auc


def evaluate_masks(prob_maps, gts, threshold: float = 0.5, match_radius: float = 3.0,
                   n_thresholds: int = 33) -> MetricsReport:
    """Full report from probability maps and binary ground-truth masks."""
    prob_maps, gts = _as_mask_list(prob_maps), _as_mask_list(gts)
    _check_pairs(prob_maps, gts)
    preds = [binarize(p, threshold) for p in prob_maps]
    pd, fa = pd_fa(preds, gts, match_radius=match_radius)
    curve, auc = roc_curve(prob_maps, gts, n_thresholds=n_thresholds)
    return MetricsReport(iou=iou(preds, gts), niou=niou(preds, gts), pd=pd, fa=fa,
                         roc=curve, auc=auc, n_samples=len(gts))


def write_roc_csv(path, roc_points) -> None:
    lines = ["fpr,tpr"] + [f"{f!r},{t!r}" for f, t in roc_points]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
