"""Toy scene generation: poses, clutter, sensor degradation, pseudo-color, windows.

Synthetic depth (clean render plus median filter) plays the role of rendered
training data; degraded depth plus pseudo-color shading plays the role of a
real RGB-D capture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheiralityError, ContractError
from .geometry import CameraIntrinsics, RigidPose, look_at_rotation, project, rot_z
from .render import Mesh, ObjectModel, box_mesh, render_meshes

DEPTH_RANGE_M = 2.0   # depth window normalization: [0, DEPTH_RANGE_M] -> [-1, 1]
TAG_OBJECT, TAG_CLUTTER = 0, 1


@dataclass(frozen=True)
class PoseRanges:
    azimuth_deg: tuple = (-180.0, 180.0)
    view_z: tuple = (0.0, 1.0)          # z component of the viewing direction
    inplane_deg: tuple = (-45.0, 45.0)
    distance_m: tuple = (0.65, 1.15)

    def __post_init__(self):
        lo, hi = self.view_z
        if not (0.0 <= lo <= hi <= 1.0):
            raise ContractError("view_z must satisfy 0 <= lo <= hi <= 1")
        if not (0 < self.distance_m[0] <= self.distance_m[1]):
            raise ContractError("distance range must be positive and ordered")
        if self.azimuth_deg[0] > self.azimuth_deg[1] or self.inplane_deg[0] > self.inplane_deg[1]:
            raise ContractError("angle ranges must be ordered")


@dataclass(frozen=True)
class GapSpec:
    """Sensor model turning a clean render into a 'real' depth capture."""

    noise_sigma: float = 0.005
    quant_step: float = 0.002
    edge_threshold: float = 0.05
    edge_dropout: float = 0.15
    radial_k: float = 0.03

    @classmethod
    def identity(cls) -> "GapSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StyleSpec:
    ambient: float = 0.3
    albedo_jitter: float = 0.1
    stripe_amplitude: float = 0.15
    stripe_period_m: float = 0.02
    clutter_rects: int = 6


def sample_pose(rng: np.random.Generator, ranges: PoseRanges = PoseRanges()) -> RigidPose:
    """Viewpoint uniform over the (partial) upper hemisphere, in-plane roll, distance."""
    z = rng.uniform(*ranges.view_z)
    az = np.deg2rad(rng.uniform(*ranges.azimuth_deg))
    r = np.sqrt(max(0.0, 1.0 - z * z))
    viewpoint = np.array([r * np.cos(az), r * np.sin(az), z])
    roll = np.deg2rad(rng.uniform(*ranges.inplane_deg))
    dist = rng.uniform(*ranges.distance_m)
    R = rot_z(roll) @ look_at_rotation(viewpoint)
    return RigidPose(R, np.array([0.0, 0.0, dist]))


def viewpoint_of(pose: RigidPose) -> np.ndarray:
    """Unit direction from the object origin towards the camera, in object coordinates."""
    c = -pose.rotation.T @ pose.translation
    return c / np.linalg.norm(c)


# --- clutter ----------------------------------------------------------------

def sample_clutter(rng: np.random.Generator, object_distance: float, n_boxes: int = 3):
    """Random boxes and a back wall, all behind the object."""
    items = []
    wall_z = object_distance + rng.uniform(0.25, 0.6)
    tilt = rng.uniform(-0.3, 0.3, size=2)
    wall = box_mesh((3.0, 3.0, 0.01))
    R = rot_x(tilt[0]) @ rot_y(tilt[1])
    items.append((wall, RigidPose(R, np.array([0.0, 0.0, wall_z])), TAG_CLUTTER))
    for _ in range(n_boxes):
        ext = rng.uniform(0.04, 0.15, size=3)
        z = rng.uniform(object_distance + 0.12, wall_z - 0.05)
        xy = rng.uniform(-0.25, 0.25, size=2) * z
        R = rot_z(rng.uniform(0, np.pi)) @ rot_x(rng.uniform(-0.5, 0.5))
        items.append((box_mesh(ext), RigidPose(R, np.array([xy[0], xy[1], z])), TAG_CLUTTER))
    return items


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def render_scene(model: ObjectModel, pose: RigidPose, intr: CameraIntrinsics, clutter=()):
    """Depth, tag map (object/clutter/none) and part map of object plus clutter."""
    return render_meshes([(model.mesh, pose, TAG_OBJECT), *clutter], intr)


# --- sensor degradation -------------------------------------------------------

def _neighborhood_range(depth: np.ndarray) -> np.ndarray:
    padded = np.pad(depth, 1, mode="edge")
    win = sliding_window_view(padded, (3, 3))
    return win.max(axis=(-1, -2)) - win.min(axis=(-1, -2))


def sensor_degrade(clean: np.ndarray, rng: np.random.Generator, gap: GapSpec = GapSpec()) -> np.ndarray:
    """Noise, quantization, edge dropout and radial value distortion, in that order.

    Pixels without a return (0) stay 0.
    """
    valid = clean > 0
    out = clean.copy()
    if gap.noise_sigma > 0:
        out = out + rng.normal(0.0, gap.noise_sigma, size=out.shape)
    if gap.quant_step > 0:
        out = np.round(out / gap.quant_step) * gap.quant_step
    out = np.where(valid, out, 0.0)
    if gap.edge_dropout > 0 and gap.edge_threshold > 0:
        edges = _neighborhood_range(clean) > gap.edge_threshold
        drop = edges & (rng.uniform(size=out.shape) < gap.edge_dropout)
        out = np.where(drop, 0.0, out)
    if gap.radial_k != 0:
        H, W = out.shape
        yy, xx = np.mgrid[0:H, 0:W]
        r2 = ((xx - (W - 1) / 2) ** 2 + (yy - (H - 1) / 2) ** 2) / (((W - 1) / 2) ** 2 + ((H - 1) / 2) ** 2)
        out = out * (1.0 + gap.radial_k * r2)
    return np.where(out > 0, out, 0.0)


# --- pseudo-color ---------------------------------------------------------------

def depth_normals(depth: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame unit normals (H x W x 3) from back-projected depth gradients."""
    H, W = depth.shape
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    pts = np.stack([(uu - intr.cx) / intr.fx * depth, (vv - intr.cy) / intr.fy * depth, depth], axis=-1)
    du = np.gradient(pts, axis=1)
    dv = np.gradient(pts, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    # face the camera
    flip = n[..., 2] > 0
    n[flip] *= -1
    return n


def _background_clutter(rng: np.random.Generator, H: int, W: int, n_rects: int) -> np.ndarray:
    img = np.empty((3, H, W))
    img[:] = rng.uniform(0.0, 1.0, size=(3, 1, 1))
    for _ in range(n_rects):
        r0, c0 = rng.integers(0, H), rng.integers(0, W)
        h, w = rng.integers(3, max(4, H // 2)), rng.integers(3, max(4, W // 2))
        img[:, r0:r0 + h, c0:c0 + w] = rng.uniform(0.0, 1.0, size=(3, 1, 1))
    return img


def colorize(clean: np.ndarray, model: ObjectModel, pose: RigidPose, rng: np.random.Generator,
             style: StyleSpec = StyleSpec(), intr: CameraIntrinsics | None = None,
             part_map: np.ndarray | None = None, object_mask: np.ndarray | None = None) -> np.ndarray:
    """Lambertian pseudo-color image (3 x H x W, values in [0, 1]).

    Shading uses normals from the depth gradients under a random light direction;
    object pixels take the model's per-part albedo with a stripe texture in model
    coordinates; everything else becomes random color clutter. ``part_map`` and
    ``object_mask`` default to a re-render of the object alone.
    """
    H, W = clean.shape
    if intr is None:
        raise ContractError("colorize needs camera intrinsics")
    if part_map is None or object_mask is None:
        _, tags, parts = render_meshes([(model.mesh, pose, TAG_OBJECT)], intr)
        part_map, object_mask = parts, tags == TAG_OBJECT
    # light from the camera side
    light = rng.normal(size=3)
    light[2] = -abs(light[2]) - 0.5
    light /= np.linalg.norm(light)
    normals = depth_normals(clean, intr)
    lambert = np.clip(normals @ light, 0.0, None)
    shade = style.ambient + (1.0 - style.ambient) * lambert

    albedo = model.albedo * (1.0 + style.albedo_jitter * rng.uniform(-1, 1, size=model.albedo.shape))
    img = _background_clutter(rng, H, W, style.clutter_rects)
    if object_mask.any():
        rows, cols = np.nonzero(object_mask)
        z = clean[rows, cols]
        cam = np.stack([(cols - intr.cx) / intr.fx * z, (rows - intr.cy) / intr.fy * z, z], axis=1)
        obj = (cam - pose.translation) @ pose.rotation
        stripes = 1.0 + style.stripe_amplitude * np.sin(2 * np.pi * obj.sum(axis=1) / style.stripe_period_m)
        base = albedo[part_map[rows, cols]]
        img[:, rows, cols] = (base * (shade[rows, cols] * stripes)[:, None]).T
    return np.clip(img, 0.0, 1.0)


# --- filtering, cropping, labels ----------------------------------------------

def median_filter_5x5(img: np.ndarray) -> np.ndarray:
    """5x5 median with the neighborhood clipped to the image (even counts average the middle pair)."""
    img = np.asarray(img, dtype=np.float64)
    padded = np.pad(img, 2, mode="constant", constant_values=np.nan)
    win = sliding_window_view(padded, (5, 5)).reshape(*img.shape, 25)
    s = np.sort(win, axis=-1)  # NaNs sort last
    n = 25 - np.isnan(win).sum(axis=-1)
    lo = ((n - 1) // 2)[..., None]
    hi = (n // 2)[..., None]
    return (np.take_along_axis(s, lo, -1) + np.take_along_axis(s, hi, -1))[..., 0] / 2.0


def window_origin(center_2d, window_size: int) -> tuple[int, int]:
    cu, cv = center_2d
    return int(np.floor(cu + 0.5)) - window_size // 2, int(np.floor(cv + 0.5)) - window_size // 2


def crop(img: np.ndarray, center_2d, window_size: int, pad_value: float = 0.0) -> np.ndarray:
    """Crop a square window around ``center_2d`` (u, v); out-of-image pixels get ``pad_value``."""
    u0, v0 = window_origin(center_2d, window_size)
    H, W = img.shape[-2:]
    out = np.full(img.shape[:-2] + (window_size, window_size), pad_value, dtype=np.float64)
    r_lo, r_hi = max(v0, 0), min(v0 + window_size, H)
    c_lo, c_hi = max(u0, 0), min(u0 + window_size, W)
    if r_lo < r_hi and c_lo < c_hi:
        out[..., r_lo - v0:r_hi - v0, c_lo - u0:c_hi - u0] = img[..., r_lo:r_hi, c_lo:c_hi]
    return out


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    return np.clip(2.0 * depth / DEPTH_RANGE_M - 1.0, -1.0, 1.0)


def normalize_color(color: np.ndarray) -> np.ndarray:
    return np.clip(2.0 * color - 1.0, -1.0, 1.0)


def crop_normalize(img: np.ndarray, center_2d, window_size: int = 32, kind: str = "depth") -> np.ndarray:
    """Crop then map to [-1, 1]: depth by the fixed scene range, color channels affinely."""
    if kind == "depth":
        return normalize_depth(crop(img, center_2d, window_size, 0.0))
    if kind == "color":
        return normalize_color(crop(img, center_2d, window_size, 0.0))
    raise ContractError(f"unknown window kind {kind!r}")


def project_corners(model: ObjectModel, pose: RigidPose, intr: CameraIntrinsics) -> np.ndarray:
    """16-vector ``(u0, v0, ..., u7, v7)`` of the canonical corners under ``intr``.

    Pass window intrinsics (see ``CameraIntrinsics.window``) for window-local labels.
    """
    try:
        return project(model.corners, pose, intr).reshape(-1)
    except CheiralityError:
        raise CheiralityError("bounding-box corner behind the camera; sample rejected") from None
