"""Pose, feature-mapping and MMD losses and their weighted sum.

Pose and feature-mapping terms are averaged over the minibatch so the weights
``beta`` and ``gamma`` keep their meaning for any batch size. The MMD term is the
biased V-statistic with self-pairs included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, exp, matmul, reduce_mean, reduce_sum, scale, square, transpose
from .errors import ContractError, DimensionError
from .networks import ModelParams, f_color_forward, f_depth_forward, g_map_forward, h_pose_forward

REFERENCE_BETA = 0.02
REFERENCE_GAMMA = 0.01
REFERENCE_SIGMA = 1.0


@dataclass(frozen=True)
class LossWeights:
    beta: float = REFERENCE_BETA
    gamma: float = REFERENCE_GAMMA
    sigma: float = REFERENCE_SIGMA

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ContractError("beta and gamma must be non-negative")
        if not self.sigma > 0:
            raise ContractError("sigma must be positive")


@dataclass
class BatchTriple:
    """A synthetic minibatch (windows, labels) and a paired minibatch (color, real depth)."""

    synth_x: np.ndarray
    synth_y: np.ndarray
    pair_color: np.ndarray | None = None
    pair_depth: np.ndarray | None = None


def _as_batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != 2 or t.shape[0] == 0:
        raise ContractError(f"expected a non-empty N x k batch, got shape {t.shape}")
    return t


def _row_sq_norms(x: Tensor) -> Tensor:
    return matmul(square(x), Tensor(np.ones((x.shape[1], 1))))


def pose_loss(synth_x, synth_y, params: ModelParams) -> Tensor:
    """Mean over the batch of ``||h(f_D(x)) - y||^2``."""
    x = _as_batch(synth_x)
    y = np.asarray(synth_y, dtype=np.float64)
    spec = params.spec
    if y.shape != (x.shape[0], spec.output_dim):
        raise DimensionError(f"labels have shape {y.shape}, expected {(x.shape[0], spec.output_dim)}")
    pred = h_pose_forward(f_depth_forward(x, params.D, spec), params.h, spec)
    return scale(reduce_sum(square(pred - Tensor(y))), 1.0 / x.shape[0])


def feature_map_loss(pair_color, pair_depth, params: ModelParams) -> Tensor:
    """Mean over pairs of ``||g(f_C(color)) - f_D(depth)||^2``."""
    xc, xd = _as_batch(pair_color), _as_batch(pair_depth)
    if xc.shape[0] != xd.shape[0]:
        raise DimensionError(f"{xc.shape[0]} color windows vs {xd.shape[0]} depth windows")
    spec = params.spec
    mapped = g_map_forward(f_color_forward(xc, params.C, spec), params.g, spec)
    target = f_depth_forward(xd, params.D, spec)
    return scale(reduce_sum(square(mapped - target)), 1.0 / xc.shape[0])


def rbf_kernel(x, y, sigma: float = REFERENCE_SIGMA) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"rbf_kernel: widths {x.size} and {y.size} differ")
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    d = x - y
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def _kernel_mean(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    """Mean of ``k(a_i, b_j)`` over all pairs, as a graph node."""
    n, m = a.shape[0], b.shape[0]
    sq_a = matmul(_row_sq_norms(a), Tensor(np.ones((1, m))))
    sq_b = matmul(Tensor(np.ones((n, 1))), transpose(_row_sq_norms(b)))
    dist = sq_a + sq_b - scale(matmul(a, transpose(b)), 2.0)
    return reduce_mean(exp(scale(dist, -1.0 / (2.0 * sigma * sigma))))


def mmd_features(real_feats, synth_feats, sigma: float = REFERENCE_SIGMA) -> Tensor:
    """Biased squared MMD between two feature sets (rows are samples)."""
    a, b = _as_batch(real_feats), _as_batch(synth_feats)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    kaa = _kernel_mean(a, a, sigma)
    kab = _kernel_mean(a, b, sigma)
    kbb = _kernel_mean(b, b, sigma)
    return kaa - scale(kab, 2.0) + kbb


def mmd_loss(real_depth, synth_depth, params: ModelParams, sigma: float = REFERENCE_SIGMA) -> Tensor:
    """MMD between f_D features of real depth windows and synthetic depth windows."""
    spec = params.spec
    fr = f_depth_forward(_as_batch(real_depth), params.D, spec)
    fs = f_depth_forward(_as_batch(synth_depth), params.D, spec)
    return mmd_features(fr, fs, sigma)


def mmd_full(real_depth, synth_depth, params: ModelParams, sigma: float = REFERENCE_SIGMA) -> float:
    """Evaluation-only MMD over whole sets; same code path as the training term."""
    return mmd_loss(real_depth, synth_depth, params, sigma).item()


def loss_terms(batch: BatchTriple, params: ModelParams, w: LossWeights,
               fm_on: bool = True, mmd_on: bool = True) -> dict:
    """Active loss terms as graph nodes: ``{"pose": ..., "fm": ..., "mmd": ...}``.

    When both paired terms are active they share one f_D pass over the real depth
    windows; gradients accumulate through the shared node.
    """
    spec = params.spec
    x = _as_batch(batch.synth_x)
    y = np.asarray(batch.synth_y, dtype=np.float64)
    if y.shape != (x.shape[0], spec.output_dim):
        raise DimensionError(f"labels have shape {y.shape}, expected {(x.shape[0], spec.output_dim)}")
    synth_feats = f_depth_forward(x, params.D, spec)
    pred = h_pose_forward(synth_feats, params.h, spec)
    terms = {"pose": scale(reduce_sum(square(pred - Tensor(y))), 1.0 / x.shape[0])}
    if not (fm_on or mmd_on):
        return terms
    if batch.pair_depth is None or (fm_on and batch.pair_color is None):
        raise ContractError("a paired loss term is active but the paired batch is empty")
    real_feats = f_depth_forward(_as_batch(batch.pair_depth), params.D, spec)
    if fm_on:
        xc = _as_batch(batch.pair_color)
        if xc.shape[0] != real_feats.shape[0]:
            raise DimensionError(f"{xc.shape[0]} color windows vs {real_feats.shape[0]} depth windows")
        mapped = g_map_forward(f_color_forward(xc, params.C, spec), params.g, spec)
        terms["fm"] = scale(reduce_sum(square(mapped - real_feats)), 1.0 / xc.shape[0])
    if mmd_on:
        terms["mmd"] = mmd_features(real_feats, synth_feats, w.sigma)
    return terms


def combine(terms: dict, w: LossWeights) -> Tensor:
    total = terms["pose"]
    if "fm" in terms:
        total = total + scale(terms["fm"], w.beta)
    if "mmd" in terms:
        total = total + scale(terms["mmd"], w.gamma)
    return total


def total_loss(batch: BatchTriple, params: ModelParams, w: LossWeights,
               fm_on: bool = True, mmd_on: bool = True) -> Tensor:
    return combine(loss_terms(batch, params, w, fm_on, mmd_on), w)
