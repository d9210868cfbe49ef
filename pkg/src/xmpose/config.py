"""Experiment configuration and its plain-text ``key = value`` format.

One assignment per line, ``#`` starts a comment, tuples and lists are
comma-separated. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ContractError, DatasetError
from .geometry import CameraIntrinsics
from .losses import REFERENCE_BETA, REFERENCE_GAMMA, REFERENCE_SIGMA, LossWeights
from .networks import NetSpec
from .optimizer import REFERENCE_LEARNING_RATE
from .render import ChainSpec
from .scene_gen import GapSpec, PoseRanges, StyleSpec


@dataclass
class ExperimentConfig:
    seed: int = 0
    mode: str = "object"                 # object | hand
    out_dir: str = "runs/default"
    # camera and windows
    image_size: int = 64
    focal_px: float = 130.0
    window: int = 32
    # networks
    hidden_dims: tuple = (128,)
    feature_dim: int = 64
    activation: str = "relu"
    residual_blocks_g: int = 2
    bottleneck_dim: int = 8
    n_joints: int = 6
    # objective
    beta: float = REFERENCE_BETA
    gamma: float = REFERENCE_GAMMA
    sigma: float = REFERENCE_SIGMA
    fm_on: bool = True
    mmd_on: bool = True
    ablation: str = "full"
    # data
    n_synth: int = 2000
    n_pairs: int = 500
    n_test: int = 300
    extents: tuple = (0.10, 0.08, 0.06)
    azimuth_deg: tuple = (-180.0, 180.0)
    view_z: tuple = (0.0, 1.0)
    inplane_deg: tuple = (-45.0, 45.0)
    distance_m: tuple = (0.65, 1.15)
    scale_jitter: float = 0.1
    clutter_boxes: int = 3
    noise_sigma: float = 0.005
    quant_step: float = 0.002
    edge_threshold: float = 0.05
    edge_dropout: float = 0.15
    radial_k: float = 0.03
    # optimization
    batch_size: int = 128
    learning_rate: float = REFERENCE_LEARNING_RATE
    lr_decay: float = 1.0                # per-epoch multiplier; 1.0 keeps the rate constant
    epochs_pretrain_depth: int = 20
    epochs_pretrain_color: int = 20
    epochs_joint: int = 50
    # evaluation
    tau_px: float = 5.0
    kappa: float = 0.1
    pck_thresholds_mm: tuple = (0, 10, 20, 30, 40, 50, 60, 80, 100)
    wrist_align: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("object", "hand"):
            raise ContractError(f"mode must be object or hand, got {self.mode!r}")
        if self.window > self.image_size:
            raise ContractError("window cannot exceed the image size")
        for name in ("n_synth", "n_pairs", "n_test", "batch_size", "threads"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        self.weights  # validates beta, gamma, sigma

    # derived objects
    @property
    def netspec(self) -> NetSpec:
        return NetSpec(input_dim=self.window * self.window, hidden_dims=list(self.hidden_dims),
                       feature_dim=self.feature_dim, activation=self.activation,
                       residual_blocks_g=self.residual_blocks_g,
                       head_mode="object_corners" if self.mode == "object" else "hand_joints",
                       bottleneck_dim=self.bottleneck_dim if self.mode == "hand" else None,
                       n_joints=self.n_joints)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.beta, self.gamma, self.sigma)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        c = self.image_size / 2.0
        return CameraIntrinsics(self.focal_px, self.focal_px, c, c, self.image_size, self.image_size)

    @property
    def pose_ranges(self) -> PoseRanges:
        return PoseRanges(tuple(self.azimuth_deg), tuple(self.view_z),
                          tuple(self.inplane_deg), tuple(self.distance_m))

    @property
    def gap(self) -> GapSpec:
        return GapSpec(self.noise_sigma, self.quant_step, self.edge_threshold,
                       self.edge_dropout, self.radial_k)

    @property
    def style(self) -> StyleSpec:
        return StyleSpec()

    @property
    def chain(self) -> ChainSpec:
        return ChainSpec(n_joints=self.n_joints)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # text format
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (tuple, list)):
                value = ", ".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        values.update({k: v for k, v in overrides.items()})
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict) -> "ExperimentConfig":
        kinds = {f.name: f.default for f in fields(cls)}
        parsed = {}
        for key, value in values.items():
            if key not in kinds:
                raise ContractError(f"unknown config key {key!r}")
            parsed[key] = _parse(value, kinds[key]) if isinstance(value, str) else value
        return cls(**parsed)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DatasetError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, **overrides)

    def save(self, path):
        Path(path).write_text(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            elem = type(default[0]) if default else float
            return tuple(elem(s) for s in items)
        return text
    except ValueError:
        raise ContractError(f"cannot parse config value {text!r}") from None
