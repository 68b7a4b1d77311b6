"""Saliency-style evaluation: KLD, SIM (histogram intersection), and NSS,
plus a batch evaluator that builds ground truth from keypoint annotations
and aggregates per class before averaging overall.

All reductions use correctly-rounded summation (math.fsum), so the
metrics are *exactly* invariant under any permutation of pixels —
in particular under joint horizontal wraparound shifts.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParameterError, ShapeError
from .geometry import KeypointAnnotation, blur_supervision, keypoints_to_heatmap
from .numerics import STD_FLOOR
from .pft import read_pft

EPS = 1e-8


def _fsum(arr: np.ndarray) -> float:
    return math.fsum(arr.ravel().tolist())


def _as_distribution(arr: np.ndarray, eps: float = EPS) -> np.ndarray:
    values = np.asarray(arr, dtype=np.float64)
    if values.min() < 0:
        raise DomainError("metric inputs must be non-negative")
    shifted = values + eps
    return shifted / _fsum(shifted)


def kld(pred: np.ndarray, gt: np.ndarray, eps: float = EPS) -> float:
    """KL divergence after sum-normalization, ground truth as reference."""
    p = _as_distribution(pred, eps)
    g = _as_distribution(gt, eps)
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} != gt {g.shape}")
    return _fsum(g * (np.log(g + eps) - np.log(p + eps)))


def sim(pred: np.ndarray, gt: np.ndarray, eps: float = EPS) -> float:
    """Histogram intersection of the sum-normalized maps, in [0, 1]."""
    p = _as_distribution(pred, eps)
    g = _as_distribution(gt, eps)
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} != gt {g.shape}")
    return _fsum(np.minimum(p, g))


def nss(pred: np.ndarray, keypoints) -> float:
    """Mean standardized prediction value at the keypoint pixels.

    The map is standardized to zero mean and unit population std (floored
    at 1e-8); keypoints are (u, v) = (column, row) pairs.
    """
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError("nss expects an H×W map")
    pts = list(keypoints)
    if not pts:
        raise ParameterError("nss needs at least one keypoint")
    h, w = p.shape
    for (u, v) in pts:
        if not (0 <= u < w and 0 <= v < h):
            raise DomainError(f"keypoint ({u},{v}) outside {h}x{w} map")
    mean = _fsum(p) / p.size
    std = max(math.sqrt(_fsum((p - mean) ** 2) / p.size), STD_FLOOR)
    z = (p - mean) / std
    return math.fsum(float(z[v, u]) for (u, v) in pts) / len(pts)


@dataclass(frozen=True)
class MetricRow:
    image_id: str
    affordance: str
    kld: float
    sim: float
    nss: float


@dataclass
class MetricReport:
    """Per-(image, class) rows plus per-class and overall aggregates.

    Rows are sorted by (image_id, class); the overall mean equals the
    count-weighted mean of the per-class means by construction.
    """

    rows: list[MetricRow] = field(default_factory=list)
    per_class: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_image": [
                {"image_id": r.image_id, "class": r.affordance,
                 "kld": r.kld, "sim": r.sim, "nss": r.nss}
                for r in self.rows
            ],
            "per_class": self.per_class,
            "overall": self.overall,
            "skipped": list(self.skipped),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "class", "kld", "sim", "nss"])
            for r in self.rows:
                writer.writerow([r.image_id, r.affordance,
                                 f"{r.kld:.6f}", f"{r.sim:.6f}", f"{r.nss:.6f}"])


def _aggregate(rows: list[MetricRow], skipped: list[str]) -> MetricReport:
    rows = sorted(rows, key=lambda r: (r.image_id, r.affordance))
    per_class: dict = {}
    for name in sorted({r.affordance for r in rows}):
        sel = [r for r in rows if r.affordance == name]
        per_class[name] = {
            "count": len(sel),
            "kld": float(np.mean([r.kld for r in sel])),
            "sim": float(np.mean([r.sim for r in sel])),
            "nss": float(np.mean([r.nss for r in sel])),
        }
    overall: dict = {"count": len(rows)}
    if rows:
        overall.update(
            kld=float(np.mean([r.kld for r in rows])),
            sim=float(np.mean([r.sim for r in rows])),
            nss=float(np.mean([r.nss for r in rows])),
        )
    return MetricReport(rows, per_class, overall, sorted(skipped))


def _evaluate_one(pred_dir: Path, ann: KeypointAnnotation, classes,
                  sigma_px: float):
    pred_path = pred_dir / f"{ann.image_id}.pft"
    if not pred_path.exists():
        return ann.image_id, None
    pred = read_pft(pred_path)
    if pred.ndim != 3 or pred.shape != (len(classes), ann.height, ann.width):
        raise ShapeError(
            f"{pred_path}: expected {(len(classes), ann.height, ann.width)}, "
            f"got {tuple(pred.shape)}")
    gt = blur_supervision(keypoints_to_heatmap(ann, classes, sigma_px), sigma_px)
    rows = []
    for idx, name in enumerate(classes):
        points = ann.points_for(name)
        if not points:
            continue
        rows.append(MetricRow(
            image_id=ann.image_id,
            affordance=name,
            kld=kld(pred[idx], gt[idx]),
            sim=sim(pred[idx], gt[idx]),
            nss=nss(pred[idx], points),
        ))
    return ann.image_id, rows


def evaluate_dataset(pred_dir, annotations, classes, sigma_px: float,
                     jobs: int = 1) -> MetricReport:
    """Score predictions in ``pred_dir`` (one ``<image_id>.pft`` per image)
    against keypoint annotations.

    Ground truth is rebuilt from the keypoints (Gaussian heatmap + blur at
    ``sigma_px``).  Only classes with at least one keypoint are scored.
    Missing prediction files are collected in ``report.skipped``.  The
    report is identical for any ``jobs`` value.
    """
    pred_dir = Path(pred_dir)
    if jobs < 1:
        raise ParameterError("jobs must be >= 1")
    annotations = sorted(annotations, key=lambda a: a.image_id)
    work = [(pred_dir, ann, list(classes), float(sigma_px)) for ann in annotations]
    if jobs == 1:
        results = [_evaluate_one(*args) for args in work]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda args: _evaluate_one(*args), work))
    rows: list[MetricRow] = []
    skipped: list[str] = []
    for image_id, item in results:
        if item is None:
            skipped.append(image_id)
        else:
            rows.extend(item)
    return _aggregate(rows, skipped)
