"""Triangle meshes, object models and a z-buffer rasterizer producing depth in meters.

Pixel centers sit at integer coordinates: pixel ``(row, col)`` sees the ray
through ``u = col``, ``v = row``. Depth is the camera-frame Z of the nearest
surface, 0 where nothing is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial.distance import pdist

from .geometry import CameraIntrinsics, RigidPose, axis_angle_to_matrix
from .errors import ContractError

# sign patterns (-,-,-), (-,-,+), ..., (+,+,+): x is the most significant bit
CORNER_SIGNS = np.array(list(product((-1.0, 1.0), repeat=3)))

# (vertex indices, part id) per box face, counter-clockwise seen from outside
_BOX_FACES = [
    ((0, 1, 3, 2), 0),  # -x
    ((4, 6, 7, 5), 1),  # +x
    ((0, 4, 5, 1), 2),  # -y
    ((2, 3, 7, 6), 3),  # +y
    ((0, 2, 6, 4), 4),  # -z
    ((1, 5, 7, 3), 5),  # +z
]


@dataclass
class Mesh:
    vertices: np.ndarray          # V x 3
    faces: np.ndarray             # F x 3 vertex indices
    face_part: np.ndarray         # F part ids, used for texturing

    def transformed(self, rotation, translation) -> "Mesh":
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return Mesh(v, self.faces, self.face_part)


def box_mesh(extents, part_offset: int = 0) -> Mesh:
    half = 0.5 * np.asarray(extents, dtype=np.float64)
    verts = CORNER_SIGNS * half
    faces, parts = [], []
    for (a, b, c, d), part in _BOX_FACES:
        faces += [(a, b, c), (a, c, d)]
        parts += [part + part_offset] * 2
    return Mesh(verts, np.array(faces), np.array(parts))


def merge_meshes(meshes) -> Mesh:
    verts, faces, parts, offset = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        parts.append(m.face_part)
        offset += len(m.vertices)
    return Mesh(np.vstack(verts), np.vstack(faces), np.concatenate(parts))


def sample_box_surface(extents, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform points on the surface of a centered box."""
    half = 0.5 * np.asarray(extents, dtype=np.float64)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


@dataclass
class ObjectModel:
    """A rigid object: mesh, canonical bounding-box corners, metric points, albedo."""

    name: str
    extents: np.ndarray
    mesh: Mesh
    corners: np.ndarray
    points: np.ndarray
    diameter: float
    albedo: np.ndarray = field(repr=False)  # part id -> RGB in [0, 1]

    def scaled(self, s: float) -> "ObjectModel":
        return ObjectModel(self.name, self.extents * s,
                           Mesh(self.mesh.vertices * s, self.mesh.faces, self.mesh.face_part),
                           self.corners * s, self.points * s, self.diameter * s, self.albedo)


def bbox_corners(vertices: np.ndarray) -> np.ndarray:
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return center + CORNER_SIGNS * half


def random_albedo(n_parts: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    return rng.uniform(0.15, 0.95, size=(n_parts, 3))


def cuboid_model(extents=(0.10, 0.08, 0.06), n_points: int = 500, seed: int = 0) -> ObjectModel:
    """The default toy object; its diameter is the space diagonal."""
    extents = np.asarray(extents, dtype=np.float64)
    if (extents <= 0).any():
        raise ContractError("cuboid extents must be positive")
    mesh = box_mesh(extents)
    rng = np.random.default_rng([seed, 104729])
    points = np.vstack([mesh.vertices, sample_box_surface(extents, n_points, rng)])
    return ObjectModel("cuboid", extents, mesh, bbox_corners(mesh.vertices), points,
                       float(pdist(points).max()), random_albedo(6, seed))


# --- articulated toy hand ---------------------------------------------------

@dataclass(frozen=True)
class ChainSpec:
    """A chain of box segments bending about their local y axis."""

    lengths: tuple = (0.045, 0.035, 0.03)
    thickness: tuple = (0.022, 0.016)
    n_joints: int = 6
    max_flex_deg: float = 70.0
    max_abduct_deg: float = 25.0

    @property
    def root_offset(self) -> np.ndarray:
        # model origin sits near the middle of the straight chain
        return np.array([-0.5 * sum(self.lengths), 0.0, 0.0])


def sample_articulation(rng: np.random.Generator, chain: ChainSpec) -> np.ndarray:
    """Root abduction followed by one flexion angle per segment (radians)."""
    flex = np.deg2rad(rng.uniform(0.0, chain.max_flex_deg, size=len(chain.lengths)))
    abduct = np.deg2rad(rng.uniform(-chain.max_abduct_deg, chain.max_abduct_deg))
    return np.concatenate([[abduct], flex])


def chain_geometry(chain: ChainSpec, angles: np.ndarray):
    """Mesh of the posed chain and its ``n_joints`` markers along the centerline."""
    R = axis_angle_to_matrix(np.array([0.0, 0.0, angles[0]]))
    p = chain.root_offset.copy()
    meshes, polyline = [], [p.copy()]
    for k, length in enumerate(chain.lengths):
        R = R @ axis_angle_to_matrix(np.array([0.0, angles[k + 1], 0.0]))
        direction = R[:, 0]
        center = p + 0.5 * length * direction
        box = box_mesh((length, chain.thickness[0], chain.thickness[1]), part_offset=6 * k)
        meshes.append(box.transformed(R, center))
        p = p + length * direction
        polyline.append(p.copy())
    polyline = np.array(polyline)
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], chain.n_joints)
    joints = np.stack([np.interp(targets, arc, polyline[:, i]) for i in range(3)], axis=1)
    return merge_meshes(meshes), joints


def chain_model(chain: ChainSpec, angles: np.ndarray, seed: int = 0) -> ObjectModel:
    mesh, joints = chain_geometry(chain, angles)
    return ObjectModel("chain", mesh.vertices.max(0) - mesh.vertices.min(0), mesh,
                       bbox_corners(mesh.vertices), joints, float(pdist(mesh.vertices).max()),
                       random_albedo(6 * len(chain.lengths), seed))


# --- rasterizer ---------------------------------------------------------------

NEAR_PLANE = 1e-3


def _rasterize(tris: np.ndarray, intr: CameraIntrinsics, zbuf: np.ndarray,
               idbuf: np.ndarray, ids: np.ndarray):
    """Z-buffer camera-frame triangles (T x 3 x 3) into ``zbuf``/``idbuf`` in place."""
    H, W = zbuf.shape
    fx, fy, cx, cy = intr.fx, intr.fy, intr.cx, intr.cy
    for tri, tid in zip(tris, ids):
        if (tri[:, 2] <= NEAR_PLANE).any():
            continue
        u = fx * tri[:, 0] / tri[:, 2] + cx
        v = fy * tri[:, 1] / tri[:, 2] + cy
        area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
        if abs(area) < 1e-12:
            continue
        c0, c1 = max(int(np.ceil(u.min())), 0), min(int(np.floor(u.max())), W - 1)
        r0, r1 = max(int(np.ceil(v.min())), 0), min(int(np.floor(v.max())), H - 1)
        if c0 > c1 or r0 > r1:
            continue
        pu, pv = np.meshgrid(np.arange(c0, c1 + 1, dtype=np.float64),
                             np.arange(r0, r1 + 1, dtype=np.float64))
        w0 = ((u[2] - u[1]) * (pv - v[1]) - (v[2] - v[1]) * (pu - u[1])) / area
        w1 = ((u[0] - u[2]) * (pv - v[2]) - (v[0] - v[2]) * (pu - u[2])) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        denom = n[0] * (pu - cx) / fx + n[1] * (pv - cy) / fy + n[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.dot(n, tri[0]) / denom
        sub_z = zbuf[r0:r1 + 1, c0:c1 + 1]
        sub_id = idbuf[r0:r1 + 1, c0:c1 + 1]
        closer = inside & (z > NEAR_PLANE) & (z < sub_z)
        sub_z[closer] = z[closer]
        sub_id[closer] = tid


def render_meshes(meshes_and_poses, intr: CameraIntrinsics):
    """Rasterize ``[(mesh, pose, tag), ...]``; returns depth, tag map and part map.

    Tag and part maps hold -1 where nothing was hit.
    """
    zbuf = np.full((intr.height, intr.width), np.inf)
    idbuf = np.full((intr.height, intr.width), -1, dtype=np.int64)
    parts, tags = [], []
    offset = 0
    for mesh, pose, tag in meshes_and_poses:
        cam = pose.transform(mesh.vertices)
        tris = cam[mesh.faces]
        _rasterize(tris, intr, zbuf, idbuf, offset + np.arange(len(mesh.faces)))
        parts.append(mesh.face_part)
        tags.append(np.full(len(mesh.faces), tag))
        offset += len(mesh.faces)
    hit = idbuf >= 0
    depth = np.where(hit, zbuf, 0.0)
    tag_map = np.full(idbuf.shape, -1, dtype=np.int64)
    part_map = np.full(idbuf.shape, -1, dtype=np.int64)
    if parts:
        all_parts, all_tags = np.concatenate(parts), np.concatenate(tags)
        tag_map[hit] = all_tags[idbuf[hit]]
        part_map[hit] = all_parts[idbuf[hit]]
    return depth, tag_map, part_map


def render_depth(model: ObjectModel | None, pose: RigidPose | None,
                 intr: CameraIntrinsics) -> np.ndarray:
    """Depth image of the model alone (background 0); ``model=None`` renders an empty scene."""
    if model is None:
        return np.zeros((intr.height, intr.width))
    depth, _, _ = render_meshes([(model.mesh, pose, 0)], intr)
    return depth
