import numpy as np
import pytest

from xmpose.config import ExperimentConfig
from xmpose.datasets import (
    build_datasets, dataset_paths, generate_sample, read_dataset, sample_seed, write_dataset,
)
from xmpose.errors import DatasetError
from xmpose.geometry import CameraIntrinsics, RigidPose
from xmpose.render import cuboid_model, render_depth, render_meshes
from xmpose.scene_gen import (
    GapSpec, PoseRanges, StyleSpec, colorize, crop, crop_normalize, depth_normals,
    median_filter_5x5, normalize_depth, project_corners, sample_pose, sensor_degrade, viewpoint_of,
)

INTR = CameraIntrinsics(130.0, 130.0, 32.0, 32.0, 64, 64)


def raycast_box(extents, pose: RigidPose, intr: CameraIntrinsics) -> np.ndarray:
    """Slab-method ray cast per pixel; returns camera Z of the nearest hit or 0."""
    half = np.asarray(extents) / 2.0
    R, t = pose.rotation, pose.translation
    out = np.zeros((intr.height, intr.width))
    origin = R.T @ (-t)
    for v in range(intr.height):
        for u in range(intr.width):
            d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
            d = R.T @ d_cam
            t_near, t_far = -np.inf, np.inf
            hit = True
            for k in range(3):
                if abs(d[k]) < 1e-15:
                    if abs(origin[k]) > half[k]:
                        hit = False
                        break
                    continue
                a = (-half[k] - origin[k]) / d[k]
                b = (half[k] - origin[k]) / d[k]
                t_near = max(t_near, min(a, b))
                t_far = min(t_far, max(a, b))
            if hit and t_near <= t_far and t_near > 0:
                out[v, u] = t_near  # d_cam has unit z, so the ray parameter is camera Z
    return out


def _compare_to_oracle(extents, pose):
    model = cuboid_model(extents)
    got = render_depth(model, pose, INTR)
    ref = raycast_box(extents, pose, INTR)
    both = (got > 0) & (ref > 0)
    # coverage may differ only on pixels whose center grazes an edge
    assert ((got > 0) != (ref > 0)).sum() <= 2
    np.testing.assert_allclose(got[both], ref[both], rtol=0, atol=1e-9)
    return got, ref


def test_unit_cube_face_on():
    pose = RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    got, ref = _compare_to_oracle((1.0, 1.0, 1.0), pose)
    assert abs(got[32, 32] - 0.5) <= 1e-12 and abs(ref[32, 32] - 0.5) <= 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_render_matches_raycast_on_random_poses(seed):
    pose = sample_pose(np.random.default_rng(seed))
    _compare_to_oracle((0.10, 0.08, 0.06), pose)


def test_translation_in_z_adds_offset():
    R = sample_pose(np.random.default_rng(9)).rotation
    near = render_depth(cuboid_model(), RigidPose(R, np.array([0.0, 0.0, 0.8])), INTR)
    far = render_depth(cuboid_model(), RigidPose(R, np.array([0.0, 0.0, 0.9])), INTR)
    far_ref = raycast_box((0.10, 0.08, 0.06), RigidPose(R, np.array([0.0, 0.0, 0.9])), INTR)
    both = (far > 0) & (far_ref > 0)
    np.testing.assert_allclose(far[both], far_ref[both], atol=1e-9)
    # the object shrinks with distance, so compare along rays that hit it both times
    ref_near = raycast_box((0.10, 0.08, 0.06), RigidPose(R, np.array([0.0, 0.0, 0.8])), INTR)
    assert np.abs(near[near > 0] - ref_near[near > 0]).max() <= 1e-9


def test_empty_scene_is_zero():
    assert not render_depth(None, None, INTR).any()
    depth, tags, parts = render_meshes([], INTR)
    assert not depth.any() and (tags == -1).all() and (parts == -1).all()


def test_sample_pose_statistics():
    rng = np.random.default_rng(0)
    poses = [sample_pose(rng) for _ in range(10_000)]
    d = np.array([p.translation[2] for p in poses])
    assert d.min() >= 0.65 and d.max() <= 1.15
    z = np.array([viewpoint_of(p)[2] for p in poses])
    assert abs(z.mean() - 0.5) <= 0.02 and z.min() >= -1e-12
    for p in poses[:200]:
        R = p.rotation
        assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9 and abs(np.linalg.det(R) - 1) <= 1e-9


def test_sample_pose_deterministic():
    a = [sample_pose(np.random.default_rng(5)) for _ in range(3)]
    b = [sample_pose(np.random.default_rng(5)) for _ in range(3)]
    for p, q in zip(a, b):
        assert p.rotation.tobytes() == q.rotation.tobytes()
    with pytest.raises(Exception):
        PoseRanges(view_z=(0.5, 0.2))


def _clean_scene(seed=0):
    pose = sample_pose(np.random.default_rng(seed))
    return render_depth(cuboid_model(), pose, INTR), pose


def test_degrade_identity_spec():
    clean, _ = _clean_scene()
    assert sensor_degrade(clean, np.random.default_rng(0), GapSpec.identity()).tobytes() == clean.tobytes()


def test_degrade_quantization():
    clean, _ = _clean_scene(1)
    out = sensor_degrade(clean, np.random.default_rng(0),
                         GapSpec(noise_sigma=0.005, quant_step=0.002, edge_threshold=0.0,
                                 edge_dropout=0.0, radial_k=0.0))
    q = out[out > 0] / 0.002
    np.testing.assert_allclose(q, np.round(q), atol=1e-9)


def test_degrade_noise_statistics():
    clean = np.full((400, 250), 1.0)
    out = sensor_degrade(clean, np.random.default_rng(0), GapSpec(0.005, 0.0, 0.0, 0.0, 0.0))
    assert abs((out - clean).std() - 0.005) <= 0.1 * 0.005


def test_degrade_edge_dropout_only_at_discontinuities():
    clean, _ = _clean_scene(2)
    out = sensor_degrade(clean, np.random.default_rng(0), GapSpec(0.0, 0.0, 0.05, 1.0, 0.0))
    dropped = (clean > 0) & (out == 0)
    assert dropped.any()
    # every dropped pixel sits next to a jump larger than the threshold
    for r, c in zip(*np.nonzero(dropped)):
        patch = clean[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2]
        assert patch.max() - patch.min() > 0.05


def test_depth_normals_constant_on_plane():
    vv, uu = np.mgrid[0:64, 0:64].astype(float)
    # plane z = 1 + 0.1 X, expressed per pixel through the ray equation
    depth = 1.0 / (1.0 - 0.1 * (uu - 32) / 130)
    n = depth_normals(depth, INTR)[2:-2, 2:-2].reshape(-1, 3)
    assert np.abs(n - n[0]).max() <= 1e-9


def test_colorize_flat_face_has_constant_shading():
    # a large box seen face-on fills the image with one flat face
    from xmpose.render import ObjectModel, box_mesh, bbox_corners
    mesh = box_mesh((3.0, 3.0, 0.1))
    wall = ObjectModel("wall", np.array([3.0, 3.0, 0.1]), mesh, bbox_corners(mesh.vertices),
                       mesh.vertices, 1.0, np.full((6, 3), 0.5))
    pose = RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    depth = render_depth(wall, pose, INTR)
    style = StyleSpec(albedo_jitter=0.0, stripe_amplitude=0.0)
    img = colorize(depth, wall, pose, np.random.default_rng(0), style, INTR)
    inner = img[:, 2:-2, 2:-2].reshape(3, -1)
    assert np.abs(inner - inner[:, :1]).max() <= 1e-12


def test_colorize_deterministic_in_seed():
    clean, pose = _clean_scene(3)
    model = cuboid_model()
    a = colorize(clean, model, pose, np.random.default_rng(4), intr=INTR)
    b = colorize(clean, model, pose, np.random.default_rng(4), intr=INTR)
    assert a.tobytes() == b.tobytes() and a.min() >= 0 and a.max() <= 1


def sort_median_oracle(img):
    H, W = img.shape
    out = np.empty_like(img)
    for r in range(H):
        for c in range(W):
            vals = sorted(img[max(r - 2, 0):r + 3, max(c - 2, 0):c + 3].reshape(-1))
            n = len(vals)
            out[r, c] = vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2.0
    return out


def test_median_filter_examples():
    const = np.full((9, 9), 0.7)
    assert median_filter_5x5(const).tobytes() == const.tobytes()
    spike = const.copy()
    spike[4, 4] = 5.0
    assert median_filter_5x5(spike)[4, 4] == 0.7


@pytest.mark.parametrize("shape", [(12, 12), (7, 15), (3, 4)])
def test_median_filter_matches_sort_oracle(shape):
    img = np.random.default_rng(sum(shape)).normal(size=shape)
    assert median_filter_5x5(img).tobytes() == sort_median_oracle(img).tobytes()


def test_crop_normalize():
    full = np.linspace(0.0, 2.0, 64 * 64).reshape(64, 64)
    w = normalize_depth(full)
    assert w.min() == -1.0 and w.max() == 1.0
    assert (crop_normalize(np.zeros((64, 64)), (32, 32), 32) == -1.0).all()
    img = np.arange(16.0).reshape(4, 4) + 1
    corner = crop(img, (0, 0), 4, pad_value=-3.0)
    expected = np.full((4, 4), -3.0)
    expected[2:, 2:] = img[:2, :2]
    assert corner.tobytes() == expected.tobytes()
    c = crop_normalize(np.ones((3, 64, 64)), (32, 32), 32, "color")
    assert c.shape == (3, 32, 32) and (c == 1.0).all()


def test_project_corners_examples():
    intr = CameraIntrinsics(100.0, 100.0, 16.0, 16.0, 32, 32)
    from xmpose.render import ObjectModel, box_mesh
    mesh = box_mesh((0.2, 0.2, 0.2))
    corners = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]] + [[0.0, 0.0, 0.0]] * 6)
    m = ObjectModel("pts", np.ones(3), mesh, corners, corners, 1.0, np.ones((6, 3)))
    lab = project_corners(m, RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0])), intr)
    assert lab.shape == (16,)
    assert lab[:4].tolist() == [16.0, 16.0, 26.0, 16.0]


def test_colorize_is_not_linearly_invertible():
    cfg = ExperimentConfig(n_pairs=1)
    X, Y = [], []
    for i in range(1000):
        img, _, _, _ = generate_sample(cfg, "pairs", i)
        X.append(img[:3].reshape(3, -1).T)
        real = img[3].reshape(-1)
        Y.append(real)
    X = np.vstack(X)
    Y = np.concatenate(Y)
    A = np.hstack([X, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    rmse_m = np.sqrt(np.mean((A @ coef - Y) ** 2))  # normalized units; 1 unit = 1 m
    assert rmse_m >= 5 * 0.005


def test_dataset_files(tmp_path):
    cfg = ExperimentConfig(n_synth=6, n_pairs=5, n_test=4, seed=3)
    paths = build_datasets(cfg, tmp_path)
    assert set(paths) == {"synth", "pairs", "test"} and paths == dataset_paths(tmp_path)
    synth, pairs, test = (read_dataset(paths[k]) for k in ("synth", "pairs", "test"))
    assert (len(synth), len(pairs), len(test)) == (6, 5, 4)
    assert synth.channels == 1 and pairs.channels == 4 and test.channels == 4
    assert pairs.labels is None and synth.labels.shape == (6, 16) and test.labels.shape == (4, 16)
    assert synth.images.min() >= -1 and synth.images.max() <= 1
    assert not set(test.seeds) & (set(synth.seeds) | set(pairs.seeds))
    assert test.seeds[0] == sample_seed(3, "test", 0)
    # color and depth of one pair come from the same pose
    img, _, pose, _ = generate_sample(cfg, "pairs", 2)
    assert img.tobytes() == pairs.images[2].tobytes()
    np.testing.assert_array_equal(pose.translation, pairs.translations[2])
    # round trip through the file format
    write_dataset(tmp_path / "copy.xmpd", test)
    again = read_dataset(tmp_path / "copy.xmpd")
    assert again.images.tobytes() == test.images.tobytes() and again.origin == test.origin
    (tmp_path / "bad.xmpd").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "bad.xmpd")


def test_generation_independent_of_thread_count(tmp_path):
    cfg = ExperimentConfig(n_synth=4, n_pairs=4, n_test=4, seed=1)
    a = build_datasets(cfg, tmp_path / "a", threads=1)
    b = build_datasets(cfg, tmp_path / "b", threads=3)
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
