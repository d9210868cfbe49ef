"""Pose accuracy metrics: 2D projection, ADD, 3D PCK and mean joint error."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import CameraIntrinsics, RigidPose

CSV_FIELDS = ("metric", "threshold", "split", "seed", "ablation", "value")


@dataclass
class EvalRecord:
    """One prediction and its ground truth; poses in object mode, J x 3 joints (mm) in hand mode."""

    predicted: RigidPose | np.ndarray | None
    truth: RigidPose | np.ndarray

    @property
    def is_object(self) -> bool:
        return isinstance(self.truth, RigidPose)


@dataclass
class PckCurve:
    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.thresholds.shape != self.values.shape:
            raise ContractError("PCK thresholds and values differ in length")


def _check(records, object_mode: bool):
    if not records:
        raise ContractError("no evaluation records")
    for r in records:
        if r.is_object != object_mode:
            raise ContractError("record mode does not match the metric")
        if not object_mode and r.predicted is not None and np.shape(r.predicted) != np.shape(r.truth):
            raise ContractError("predicted and true joint sets differ in shape")


def _pixels(points, pose: RigidPose, intr: CameraIntrinsics) -> np.ndarray:
    cam = pose.transform(points)
    z = np.where(cam[:, 2] > 0, cam[:, 2], np.nan)
    return np.stack([intr.fx * cam[:, 0] / z + intr.cx, intr.fy * cam[:, 1] / z + intr.cy], axis=1)


def projection_errors(records, model_points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Mean 2D distance of model points under predicted vs true pose, per record (inf if no prediction)."""
    pts = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractError("model_points is empty")
    _check(records, True)
    out = np.empty(len(records))
    for i, r in enumerate(records):
        if r.predicted is None:
            out[i] = np.inf
            continue
        d = np.linalg.norm(_pixels(pts, r.predicted, intrinsics) - _pixels(pts, r.truth, intrinsics), axis=1)
        out[i] = np.inf if np.isnan(d).any() else d.mean()
    return out


def projection_metric(records, model_points, intrinsics: CameraIntrinsics, tau_px: float = 5.0) -> float:
    return float(np.mean(projection_errors(records, model_points, intrinsics) < tau_px))


def add_errors(records, model_points) -> np.ndarray:
    pts = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractError("model_points is empty")
    _check(records, True)
    out = np.empty(len(records))
    for i, r in enumerate(records):
        if r.predicted is None:
            out[i] = np.inf
            continue
        out[i] = np.linalg.norm(r.predicted.transform(pts) - r.truth.transform(pts), axis=1).mean()
    return out


def add_metric(records, model_points, diameter: float, kappa: float = 0.1) -> float:
    if not diameter > 0:
        raise ContractError("diameter must be positive")
    return float(np.mean(add_errors(records, model_points) < kappa * diameter))


def joint_errors(records, wrist_align: bool = False, wrist_index: int = 0) -> np.ndarray:
    """Per-joint Euclidean errors (records x J), optionally after aligning the wrist."""
    _check(records, False)
    errs = []
    for r in records:
        truth = np.asarray(r.truth, dtype=np.float64)
        pred = np.asarray(r.predicted, dtype=np.float64)
        if wrist_align:
            pred = pred - pred[wrist_index] + truth[wrist_index]
        errs.append(np.linalg.norm(pred - truth, axis=1))
    return np.array(errs)


def pck_curve(records, thresholds_mm, wrist_align: bool = True) -> PckCurve:
    """Fraction of pooled joints with error strictly below each threshold."""
    th = np.sort(np.asarray(thresholds_mm, dtype=np.float64))
    errs = joint_errors(records, wrist_align).reshape(-1)
    return PckCurve(th, np.array([np.mean(errs < t) for t in th]))


def mean_joint_error(records, wrist_align: bool = False) -> float:
    return float(joint_errors(records, wrist_align).mean())


def metrics_csv(rows, header_lines=()) -> str:
    """Render metric rows as CSV; ``header_lines`` become leading ``#`` comments."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([row[k] if k != "value" else repr(float(row[k])) for k in CSV_FIELDS])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    for r in rows:
        r["value"] = float(r["value"])
        r["threshold"] = float(r["threshold"])
    return rows
