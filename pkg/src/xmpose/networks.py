"""The four networks: depth extractor, color extractor, feature mapping, pose head.

All networks are small fully-connected stacks over flattened windows. Inputs
are batched as ``N x input_dim`` tensors; a single window is a ``1 x input_dim``
batch. Weights are stored ``fan_in x fan_out`` and biases as ``1 x fan_out`` rows,
added through a product with a ones column so no broadcasting is needed.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, matmul, relu, tanh
from .errors import ContractError, DatasetError, DimensionError

COLLECTIONS = ("D", "C", "g", "h")
CHECKPOINT_MAGIC = b"XMPW"
CHECKPOINT_VERSION = 1


@dataclass
class NetSpec:
    input_dim: int = 32 * 32
    hidden_dims: list = field(default_factory=lambda: [128])
    feature_dim: int = 64
    activation: str = "relu"
    residual_blocks_g: int = 2
    head_mode: str = "object_corners"
    bottleneck_dim: int | None = None
    n_joints: int = 6
    color_channels: int = 3

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        dims = [self.input_dim, self.feature_dim, *self.hidden_dims]
        if min(dims) < 1:
            raise ContractError(f"all network widths must be >= 1, got {dims}")
        if self.residual_blocks_g < 1:
            raise ContractError("residual_blocks_g must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.head_mode not in ("object_corners", "hand_joints"):
            raise ContractError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == "hand_joints":
            if self.bottleneck_dim is None:
                self.bottleneck_dim = 8
            if self.bottleneck_dim < 1 or self.n_joints < 1:
                raise ContractError("bottleneck_dim and n_joints must be >= 1")

    @property
    def color_input_dim(self) -> int:
        return self.color_channels * self.input_dim

    @property
    def output_dim(self) -> int:
        return 16 if self.head_mode == "object_corners" else 3 * self.n_joints

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetSpec":
        return cls(**json.loads(text))


@dataclass
class ModelParams:
    """Parameter collections theta_D, theta_C, theta_g, theta_h keyed by layer name."""

    spec: NetSpec
    D: dict
    C: dict
    g: dict
    h: dict

    def collection(self, name: str) -> dict:
        if name not in COLLECTIONS:
            raise ContractError(f"unknown parameter collection {name!r}")
        return getattr(self, name)

    def named(self, collections=COLLECTIONS) -> dict:
        """Flat ``{"D.w0": tensor, ...}`` view over the chosen collections."""
        return {f"{c}.{k}": t for c in collections for k, t in self.collection(c).items()}

    def copy(self) -> "ModelParams":
        def dup(coll):
            return {k: Tensor(t.data.copy(), name=t.name) for k, t in coll.items()}
        return ModelParams(self.spec, dup(self.D), dup(self.C), dup(self.g), dup(self.h))

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.named().items()}

    def set_identity_mapping(self):
        """Zero every residual branch so ``g`` is exactly the identity."""
        for t in self.g.values():
            t.data[...] = 0.0


def _activation(spec: NetSpec):
    return relu if spec.activation == "relu" else tanh


def _ones(n: int) -> Tensor:
    return Tensor(np.ones((n, 1)))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = out + matmul(_ones(x.shape[0]), b)
    return out


def _check_input(x: Tensor, width: int, what: str):
    if x.data.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what}: expected N x {width} input, got {x.shape}")


def _mlp(x: Tensor, coll: dict, n_layers: int, act) -> Tensor:
    for i in range(n_layers):
        x = act(dense(x, coll[f"w{i}"], coll[f"b{i}"]))
    return x


def f_depth_forward(x: Tensor, theta_D: dict, spec: NetSpec) -> Tensor:
    """Depth windows ``N x input_dim`` to features ``N x d``."""
    _check_input(x, spec.input_dim, "f_depth")
    return _mlp(x, theta_D, len(spec.hidden_dims) + 1, _activation(spec))


def f_color_forward(x: Tensor, theta_C: dict, spec: NetSpec) -> Tensor:
    """Pseudo-color windows ``N x 3*input_dim`` to features ``N x d``."""
    _check_input(x, spec.color_input_dim, "f_color")
    return _mlp(x, theta_C, len(spec.hidden_dims) + 1, _activation(spec))


def g_map_forward(feature: Tensor, theta_g: dict, spec: NetSpec) -> Tensor:
    _check_input(feature, spec.feature_dim, "g_map")
    act = _activation(spec)
    x = feature
    for k in range(spec.residual_blocks_g):
        inner = act(dense(x, theta_g[f"w{k}a"], theta_g[f"b{k}a"]))
        x = x + dense(inner, theta_g[f"w{k}b"], theta_g[f"b{k}b"])
    return x


def h_pose_forward(feature: Tensor, theta_h: dict, spec: NetSpec,
                   mode: str | None = None) -> Tensor:
    """Features to 16 corner coordinates or ``3*J`` joint coordinates."""
    if mode is not None and mode != spec.head_mode:
        raise ContractError(f"head mode {mode!r} does not match spec {spec.head_mode!r}")
    _check_input(feature, spec.feature_dim, "h_pose")
    if spec.head_mode == "object_corners":
        return dense(feature, theta_h["w"], theta_h["b"])
    z = dense(feature, theta_h["w_bottleneck"], theta_h["b_bottleneck"])
    return dense(z, theta_h["w"], theta_h["b"])


def init_scale(fan_in: int, activation: str) -> float:
    """Half-width of the uniform init; std is ``sqrt(2/fan_in)`` for relu, ``sqrt(1/fan_in)`` for tanh."""
    gain = 2.0 if activation == "relu" else 1.0
    return float(np.sqrt(3.0 * gain / fan_in))


def init_params(spec: NetSpec, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)

    def layer(coll, name_w, name_b, fan_in, fan_out, tag):
        a = init_scale(fan_in, spec.activation)
        coll[name_w] = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), name=f"{tag}.{name_w}")
        coll[name_b] = Tensor(np.zeros((1, fan_out)), name=f"{tag}.{name_b}")

    def extractor(tag, in_dim):
        coll = {}
        widths = [in_dim, *spec.hidden_dims, spec.feature_dim]
        for i in range(len(widths) - 1):
            layer(coll, f"w{i}", f"b{i}", widths[i], widths[i + 1], tag)
        return coll

    D = extractor("D", spec.input_dim)
    C = extractor("C", spec.color_input_dim)
    g = {}
    d = spec.feature_dim
    for k in range(spec.residual_blocks_g):
        layer(g, f"w{k}a", f"b{k}a", d, d, "g")
        layer(g, f"w{k}b", f"b{k}b", d, d, "g")
    h = {}
    if spec.head_mode == "object_corners":
        layer(h, "w", "b", d, spec.output_dim, "h")
    else:
        layer(h, "w_bottleneck", "b_bottleneck", d, spec.bottleneck_dim, "h")
        layer(h, "w", "b", spec.bottleneck_dim, spec.output_dim, "h")
    return ModelParams(spec, D, C, g, h)


# --- checkpoint file -------------------------------------------------------
#
# magic "XMPW" | u32 version | u32 len + JSON header (NetSpec plus metadata)
# for each collection D, C, g, h:
#     u32 tensor count, then per tensor:
#         u32 name length | name utf-8 | u32 ndim | u64 dims... | float64 data (LE)
# u32 has_optimizer; when 1, the optimizer block follows (see optimizer.py).


def _write_tensor(buf, name: str, arr: np.ndarray):
    raw = name.encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(buf, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise DatasetError("checkpoint truncated")
    return raw


def _read_tensor(buf):
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    name = _read_exact(buf, n).decode()
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").astype(np.float64)
    return name, arr.reshape(shape)


def write_tensor_block(buf, arrays: dict):
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        _write_tensor(buf, name, arr)


def read_tensor_block(buf) -> dict:
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    return dict(_read_tensor(buf) for _ in range(count))


def save_checkpoint(path, params: ModelParams, optimizer_state=None, meta: dict | None = None):
    """Write params (and optionally the optimizer state) to an ``XMPW`` file."""
    from .optimizer import write_state

    header = {"netspec": json.loads(params.spec.to_json()), "meta": meta or {}}
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    raw = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
    buf.write(raw)
    for c in COLLECTIONS:
        write_tensor_block(buf, {k: t.data for k, t in params.collection(c).items()})
    buf.write(struct.pack("<I", 0 if optimizer_state is None else 1))
    if optimizer_state is not None:
        write_state(buf, optimizer_state)
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as exc:
        raise DatasetError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Return ``(params, optimizer_state_or_None, meta)``."""
    from .optimizer import read_state

    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read checkpoint {path}: {exc}") from exc
    buf = io.BytesIO(blob)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise DatasetError(f"{path}: not an XMPW checkpoint")
    version, n = struct.unpack("<II", _read_exact(buf, 8))
    if version != CHECKPOINT_VERSION:
        raise DatasetError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(_read_exact(buf, n))
    spec = NetSpec(**header["netspec"])
    colls = {}
    for c in COLLECTIONS:
        colls[c] = {k: Tensor(a, name=f"{c}.{k}") for k, a in read_tensor_block(buf).items()}
    params = ModelParams(spec, **colls)
    (has_opt,) = struct.unpack("<I", _read_exact(buf, 4))
    state = read_state(buf) if has_opt else None
    return params, state, header["meta"]
