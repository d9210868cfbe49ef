"""Pose from 2D-3D correspondences: DLT initialization plus damped Gauss-Newton."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheiralityError, ContractError, SolverFailure
from .geometry import CameraIntrinsics, RigidPose, axis_angle_to_matrix, nearest_rotation, project, skew

__all__ = ["Correspondences", "project", "solve_pnp", "dlt_pose", "pose_from_head_output",
           "reprojection_cost"]


@dataclass
class Correspondences:
    points3d: np.ndarray
    points2d: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.points3d = np.asarray(self.points3d, dtype=np.float64).reshape(-1, 3)
        self.points2d = np.asarray(self.points2d, dtype=np.float64).reshape(-1, 2)
        if len(self.points3d) != len(self.points2d):
            raise ContractError("3D and 2D point counts differ")
        if len(self.points3d) < 6:
            raise ContractError("the linear initializer needs at least 6 correspondences")
        if not (np.isfinite(self.points3d).all() and np.isfinite(self.points2d).all()):
            raise ContractError("correspondences contain non-finite coordinates")


def _residuals(R, t, corrs: Correspondences) -> np.ndarray:
    cam = corrs.points3d @ R.T + t
    K = corrs.intrinsics
    u = K.fx * cam[:, 0] / cam[:, 2] + K.cx
    v = K.fy * cam[:, 1] / cam[:, 2] + K.cy
    return np.stack([u, v], axis=1).reshape(-1) - corrs.points2d.reshape(-1)


def reprojection_cost(pose: RigidPose, corrs: Correspondences) -> float:
    r = _residuals(pose.rotation, pose.translation, corrs)
    return float(r @ r)


def dlt_pose(corrs: Correspondences) -> RigidPose:
    """Linear estimate of [R | t] on normalized coordinates, projected onto SO(3)."""
    K = corrs.intrinsics
    x = (corrs.points2d[:, 0] - K.cx) / K.fx
    y = (corrs.points2d[:, 1] - K.cy) / K.fy
    P = corrs.points3d
    # condition the 3D points: center and scale
    mean = P.mean(axis=0)
    s = np.sqrt(2.0) / np.mean(np.linalg.norm(P - mean, axis=1))
    Q = np.hstack([(P - mean) * s, np.ones((len(P), 1))])
    n = len(P)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Q
    A[0::2, 8:12] = -x[:, None] * Q
    A[1::2, 4:8] = Q
    A[1::2, 8:12] = -y[:, None] * Q
    _, _, Vt = np.linalg.svd(A)
    M = Vt[-1].reshape(3, 4)
    # undo the conditioning: X_cam ~ M[:, :3] * s (X - mean) + M[:, 3]
    A3 = M[:, :3] * s
    b = M[:, 3] - A3 @ mean
    # the null vector's sign is arbitrary: pick the one that puts the points in front
    if np.mean(P @ A3[2] + b[2]) < 0:
        A3, b = -A3, -b
    scale = np.linalg.svd(A3, compute_uv=False).mean()
    if not scale > 0:
        raise SolverFailure("degenerate linear system in PnP initialization")
    R = nearest_rotation(A3 / scale)
    t = b / scale
    return RigidPose(R, t)


def _jacobian(R, t, corrs: Correspondences) -> np.ndarray:
    """d residual / d (omega, t) for the left-multiplied increment exp([omega]) R."""
    K = corrs.intrinsics
    rp = corrs.points3d @ R.T
    cam = rp + t
    X, Y, Z = cam[:, 0], cam[:, 1], cam[:, 2]
    n = len(cam)
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = K.fx / Z
    du[:, 2] = -K.fx * X / Z ** 2
    dv[:, 1] = K.fy / Z
    dv[:, 2] = -K.fy * Y / Z ** 2
    J = np.zeros((2 * n, 6))
    for i in range(n):
        dcam_domega = -skew(rp[i])
        J[2 * i, :3] = du[i] @ dcam_domega
        J[2 * i + 1, :3] = dv[i] @ dcam_domega
        J[2 * i, 3:] = du[i]
        J[2 * i + 1, 3:] = dv[i]
    return J


def solve_pnp(corrs: Correspondences, max_iter: int = 50, step_tol: float = 1e-10,
              damping: float = 1e-3, max_bad_steps: int = 5) -> RigidPose:
    """Least-squares reprojection pose; never returns something worse than the DLT start."""
    pose = dlt_pose(corrs)
    R, t = pose.rotation, pose.translation
    if (corrs.points3d @ R.T + t)[:, 2].min() <= 0:
        raise CheiralityError("linear PnP estimate puts points behind the camera")
    r = _residuals(R, t, corrs)
    cost = float(r @ r)
    lam = damping
    bad = 0
    for _ in range(max_iter):
        J = _jacobian(R, t, corrs)
        H = J.T @ J
        grad = J.T @ r
        step = -np.linalg.solve(H + lam * np.diag(np.diag(H)), grad)
        if np.linalg.norm(step) < step_tol:
            break
        R_new = axis_angle_to_matrix(step[:3]) @ R
        t_new = t + step[3:]
        cam_z = (corrs.points3d @ R_new.T + t_new)[:, 2]
        new_cost = np.inf if cam_z.min() <= 0 else float(_residuals(R_new, t_new, corrs) @ _residuals(R_new, t_new, corrs))
        if new_cost < cost:
            R, t, cost = nearest_rotation(R_new), t_new, new_cost
            r = _residuals(R, t, corrs)
            lam = max(lam / 10.0, 1e-12)
            bad = 0
        elif new_cost <= cost * (1.0 + 1e-12) + 1e-24:
            break  # no further decrease within rounding: converged
        else:
            lam *= 10.0
            bad += 1
            if bad >= max_bad_steps:
                raise SolverFailure("PnP refinement diverged", best_pose=RigidPose(R, t))
    return RigidPose(R, t)


def pose_from_head_output(head16, model, intrinsics: CameraIntrinsics) -> RigidPose:
    """Pair the 16 predicted coordinates with the model's canonical corners and solve."""
    head16 = np.asarray(head16, dtype=np.float64).reshape(-1)
    if head16.size != 16:
        raise ContractError(f"expected 16 corner coordinates, got {head16.size}")
    if not np.isfinite(head16).all():
        raise ContractError("head output contains NaN or Inf")
    return solve_pnp(Correspondences(model.corners, head16.reshape(8, 2), intrinsics))
