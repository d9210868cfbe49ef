"""Dataset generation and the ``XMPD`` binary dataset format.

File layout (little-endian)::

    magic  "XMPD"
    u32    version (1)
    u32    mode        0 = object, 1 = hand
    u32    kind        0 = synthetic depth, 1 = color/depth pairs, 2 = labeled test split
    u64    record count
    u32    window size W
    u32    channels C  (1 for synthetic; 4 = RGB + real depth for pairs and test)
    u32    label dim L (16 object, 3*J hand, 0 for pairs)
    i32    window origin u, i32 window origin v (top-left pixel in the full image)
    records, each (C*W*W + L + 4 + 3 + 1) float64:
        image payload, channel-major; label payload; rotation quaternion (w, x, y, z);
        translation (m); sample seed

Every sample draws from its own generator seeded from (master seed, split, index),
so output is identical for any worker count.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import CheiralityError, DatasetError
from .geometry import RigidPose
from .render import chain_model, cuboid_model, sample_articulation
from .scene_gen import (
    TAG_OBJECT, colorize, crop_normalize, median_filter_5x5, project_corners, render_scene,
    sample_clutter, sample_pose, sensor_degrade, window_origin,
)

MAGIC = b"XMPD"
VERSION = 1
KINDS = {"synth": 0, "pairs": 1, "test": 2}
MODES = {"object": 0, "hand": 1}
SPLIT_CODES = {"synth": 11, "pairs": 22, "test": 33}
_HEADER = struct.Struct("<4sIIIQIIIii")
MAX_RESAMPLE = 20


@dataclass
class Dataset:
    mode: str
    kind: str
    window: int
    origin: tuple
    images: np.ndarray         # N x C x W x W
    labels: np.ndarray | None  # N x L
    quaternions: np.ndarray    # N x 4
    translations: np.ndarray   # N x 3
    seeds: np.ndarray          # N

    def __len__(self):
        return len(self.images)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def flat(self, channels) -> np.ndarray:
        """``N x (len(channels)*W*W)`` matrix of the chosen channels."""
        return self.images[:, list(channels)].reshape(len(self), -1)

    def pose(self, i: int) -> RigidPose:
        return RigidPose.from_quaternion(self.quaternions[i], self.translations[i])


def sample_seed(master: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([master, SPLIT_CODES[split], index])
    a, b = ss.generate_state(2, np.uint32)
    return ((int(a) << 32) | int(b)) & ((1 << 53) - 1)


def write_dataset(path, ds: Dataset):
    label_dim = 0 if ds.labels is None else ds.labels.shape[1]
    n = len(ds)
    parts = [ds.images.reshape(n, -1)]
    if label_dim:
        parts.append(ds.labels)
    parts += [ds.quaternions, ds.translations, ds.seeds.reshape(n, 1).astype(np.float64)]
    body = np.ascontiguousarray(np.hstack(parts), dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, MODES[ds.mode], KINDS[ds.kind], n, ds.window,
                          ds.channels, label_dim, int(ds.origin[0]), int(ds.origin[1]))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body.tobytes())
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path) -> Dataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    magic, version, mode, kind, n, W, C, L, ou, ov = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetError(f"{path}: not an XMPD dataset")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    width = C * W * W + L + 8
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if body.size != n * width:
        raise DatasetError(f"{path}: expected {n} records of {width} values, found {body.size} values")
    rec = body.reshape(n, width).astype(np.float64)
    img_end = C * W * W
    return Dataset(
        mode={v: k for k, v in MODES.items()}[mode],
        kind={v: k for k, v in KINDS.items()}[kind],
        window=W, origin=(ou, ov),
        images=rec[:, :img_end].reshape(n, C, W, W),
        labels=rec[:, img_end:img_end + L] if L else None,
        quaternions=rec[:, img_end + L:img_end + L + 4],
        translations=rec[:, img_end + L + 4:img_end + L + 7],
        seeds=rec[:, -1].astype(np.int64),
    )


# --- per-sample generation ------------------------------------------------------

def _model_for_sample(cfg: ExperimentConfig, rng: np.random.Generator, split: str):
    if cfg.mode == "object":
        model = cuboid_model(cfg.extents, seed=cfg.seed)
        if split != "test" and cfg.scale_jitter > 0:
            model = model.scaled(rng.uniform(1 - cfg.scale_jitter, 1 + cfg.scale_jitter))
        return model
    return chain_model(cfg.chain, sample_articulation(rng, cfg.chain), seed=cfg.seed)


def _label(cfg: ExperimentConfig, model, pose: RigidPose, origin) -> np.ndarray:
    if cfg.mode == "object":
        return project_corners(model, pose, cfg.intrinsics.window(origin[0], origin[1], cfg.window))
    # joints in the camera frame relative to the model origin, millimeters
    return (1000.0 * (model.points @ pose.rotation.T)).reshape(-1)


def generate_sample(cfg: ExperimentConfig, split: str, index: int):
    """Returns ``(image C x W x W, label or None, pose, seed)`` for one record."""
    seed = sample_seed(cfg.seed, split, index)
    rng = np.random.default_rng(seed)
    intr = cfg.intrinsics
    origin = window_origin((intr.cx, intr.cy), cfg.window)
    center = (intr.cx, intr.cy)
    for _ in range(MAX_RESAMPLE):
        model = _model_for_sample(cfg, rng, split)
        pose = sample_pose(rng, cfg.pose_ranges)
        clutter = sample_clutter(rng, pose.translation[2], cfg.clutter_boxes)
        depth, tags, parts = render_scene(model, pose, intr, clutter)
        if not (tags == TAG_OBJECT).any():
            continue
        try:
            label = _label(cfg, model, pose, origin)
        except CheiralityError:
            continue
        break
    else:
        raise DatasetError(f"could not draw a valid {split} sample {index} after {MAX_RESAMPLE} tries")

    if split == "synth":
        window = crop_normalize(median_filter_5x5(depth), center, cfg.window, "depth")
        return window[None], label, pose, seed
    color = colorize(depth, model, pose, rng, cfg.style, intr, parts, tags == TAG_OBJECT)
    real = sensor_degrade(depth, rng, cfg.gap)
    image = np.concatenate([crop_normalize(color, center, cfg.window, "color"),
                            crop_normalize(real, center, cfg.window, "depth")[None]])
    return image, (label if split == "test" else None), pose, seed


def generate_split(cfg: ExperimentConfig, split: str, count: int, threads: int = 1) -> Dataset:
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            samples = list(pool.map(lambda i: generate_sample(cfg, split, i), range(count)))
    else:
        samples = [generate_sample(cfg, split, i) for i in range(count)]
    intr = cfg.intrinsics
    labels = None if split == "pairs" else np.stack([s[1] for s in samples])
    return Dataset(
        mode=cfg.mode, kind=split, window=cfg.window,
        origin=window_origin((intr.cx, intr.cy), cfg.window),
        images=np.stack([s[0] for s in samples]),
        labels=labels,
        quaternions=np.stack([s[2].quaternion() for s in samples]),
        translations=np.stack([s[2].translation for s in samples]),
        seeds=np.array([s[3] for s in samples], dtype=np.int64),
    )


def dataset_paths(out_dir) -> dict:
    out = Path(out_dir)
    return {k: out / f"{k}.xmpd" for k in ("synth", "pairs", "test")}


def build_datasets(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> dict:
    """Generate and write the synthetic, paired and test files; returns their paths."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or cfg.threads
    sizes = {"synth": cfg.n_synth, "pairs": cfg.n_pairs, "test": cfg.n_test}
    paths = dataset_paths(out)
    seen: set = set()
    for split, n in sizes.items():
        ds = generate_split(cfg, split, n, threads)
        seeds = set(ds.seeds.tolist())
        if seeds & seen:
            raise DatasetError(f"sample seed collision between {split} and another split")
        seen |= seeds
        write_dataset(paths[split], ds)
    return paths
