"""Staged training, inference and evaluation.

Schedule: pretrain the depth stream on synthetic depth, pretrain the color
extractor by regressing paired depth from color, then train all four networks
jointly on the weighted objective. At test time only the color stream runs:
``h_D(g(f_C(x)))``.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward, matmul, reduce_mean, square
from .config import ExperimentConfig
from .datasets import Dataset, dataset_paths, read_dataset
from .errors import ContractError, NonFiniteError, SolverFailure, CheiralityError
from .geometry import RigidPose
from .losses import BatchTriple, combine, loss_terms, pose_loss
from .metrics import EvalRecord, add_metric, mean_joint_error, metrics_csv, pck_curve, projection_metric
from .networks import (
    ModelParams, dense, f_color_forward, f_depth_forward, g_map_forward, h_pose_forward,
    init_params, load_checkpoint, save_checkpoint,
)
from .optimizer import AdamState, adam_step
from .pnp import pose_from_head_output
from .render import cuboid_model

log = logging.getLogger(__name__)

STAGE_SEEDS = {"pretrain_depth": 101, "pretrain_color": 202, "joint": 303}


@dataclass
class TrainData:
    synth_x: np.ndarray
    synth_y: np.ndarray
    pair_color: np.ndarray
    pair_depth: np.ndarray

    @classmethod
    def load(cls, data_dir) -> "TrainData":
        paths = dataset_paths(data_dir)
        synth = read_dataset(paths["synth"])
        pairs = read_dataset(paths["pairs"])
        return cls.from_datasets(synth, pairs)

    @classmethod
    def from_datasets(cls, synth: Dataset, pairs: Dataset) -> "TrainData":
        return cls(synth.flat([0]), synth.labels, pairs.flat([0, 1, 2]), pairs.flat([3]))


@dataclass
class TrainLog:
    seed: int
    records: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)

    def add(self, stage: str, step: int, terms: dict, total: float):
        rec = {"stage": stage, "step": step, "total": total}
        names = {"pose": "L_P", "fm": "L_FM", "mmd": "L_MMD", "depth_mse": "L_DEPTH"}
        for k, v in terms.items():
            rec[names[k]] = v
        self.records.append(rec)

    def to_csv(self) -> str:
        cols = ["stage", "step", "L_P", "L_FM", "L_MMD", "L_DEPTH", "total"]
        buf = io.StringIO()
        buf.write(f"# seed = {self.seed}\n")
        for stage, secs in self.wall_clock.items():
            buf.write(f"# wall_clock_{stage} = {secs:.3f}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            # absent terms are blank, never zero
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
        return buf.getvalue()


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _lr(cfg: ExperimentConfig, epoch: int) -> float:
    return cfg.learning_rate * cfg.lr_decay ** epoch


def _stage_rng(cfg: ExperimentConfig, stage: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, STAGE_SEEDS[stage]])


def stage_pretrain_depth(cfg: ExperimentConfig, params: ModelParams, state: AdamState,
                         data: TrainData, train_log: TrainLog | None = None):
    """Fit theta_D and theta_h on synthetic depth with the pose loss only."""
    rng = _stage_rng(cfg, "pretrain_depth")
    named = params.named(("D", "h"))
    t0, step = time.perf_counter(), 0
    for epoch in range(cfg.epochs_pretrain_depth):
        state.alpha = _lr(cfg, epoch)
        for idx in _batches(rng, len(data.synth_x), cfg.batch_size):
            loss = pose_loss(data.synth_x[idx], data.synth_y[idx], params)
            grads = backward(loss, named.values())
            adam_step(named, {k: grads[t] for k, t in named.items()}, state)
            if train_log is not None:
                train_log.add("pretrain_depth", step, {"pose": loss.item()}, loss.item())
            step += 1
    if train_log is not None:
        train_log.wall_clock["pretrain_depth"] = time.perf_counter() - t0
    return params, state


def stage_pretrain_color(cfg: ExperimentConfig, params: ModelParams, state: AdamState,
                         data: TrainData, train_log: TrainLog | None = None):
    """Fit theta_C through a throwaway linear decoder regressing the paired depth window."""
    rng = _stage_rng(cfg, "pretrain_color")
    spec = params.spec
    a = np.sqrt(3.0 / spec.feature_dim)
    decoder = {"dec.w": Tensor(rng.uniform(-a, a, size=(spec.feature_dim, spec.input_dim))),
               "dec.b": Tensor(np.zeros((1, spec.input_dim)))}
    named = {**params.named(("C",)), **decoder}
    t0, step = time.perf_counter(), 0
    for epoch in range(cfg.epochs_pretrain_color):
        state.alpha = _lr(cfg, epoch)
        for idx in _batches(rng, len(data.pair_color), cfg.batch_size):
            feats = f_color_forward(Tensor(data.pair_color[idx]), params.C, spec)
            pred = dense(feats, decoder["dec.w"], decoder["dec.b"])
            loss = reduce_mean(square(pred - Tensor(data.pair_depth[idx])))
            grads = backward(loss, named.values())
            adam_step(named, {k: grads[t] for k, t in named.items()}, state)
            if train_log is not None:
                train_log.add("pretrain_color", step, {"depth_mse": loss.item()}, loss.item())
            step += 1
    state.drop("dec.")
    if train_log is not None:
        train_log.wall_clock["pretrain_color"] = time.perf_counter() - t0
    return params, state


def stage_joint_train(cfg: ExperimentConfig, params: ModelParams, state: AdamState,
                      data: TrainData, train_log: TrainLog | None = None, checkpoint_path=None,
                      grad_probe=None):
    """All four collections against the weighted objective with the configured ablations.

    Each step draws one synthetic minibatch and one paired minibatch. On a
    non-finite loss the last good parameters are written to ``checkpoint_path``
    (if given) and the error is re-raised.
    """
    rng = _stage_rng(cfg, "joint")
    w = cfg.weights
    if not cfg.fm_on:
        params.set_identity_mapping()
    named = params.named()
    pair_order = iter(())
    t0, step = time.perf_counter(), 0
    n_pairs = len(data.pair_color)
    bs_pairs = min(cfg.batch_size, n_pairs)
    for epoch in range(cfg.epochs_joint):
        state.alpha = _lr(cfg, epoch)
        for idx in _batches(rng, len(data.synth_x), cfg.batch_size):
            pidx = next(pair_order, None)
            if pidx is None:
                pair_order = iter(_batches(rng, n_pairs, bs_pairs))
                pidx = next(pair_order)
            batch = BatchTriple(data.synth_x[idx], data.synth_y[idx],
                                data.pair_color[pidx], data.pair_depth[pidx])
            try:
                terms = loss_terms(batch, params, w, cfg.fm_on, cfg.mmd_on)
                total = combine(terms, w)
                grads = backward(total, named.values())
            except NonFiniteError:
                # params still hold the last successful update
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, params, state, {"aborted_at_step": step})
                raise
            path_grads = {k: grads[t] for k, t in named.items()}
            if grad_probe is not None:
                grad_probe(step, path_grads)
            adam_step(named, path_grads, state)
            if train_log is not None:
                train_log.add("joint", step, {k: v.item() for k, v in terms.items()}, total.item())
            step += 1
    if train_log is not None:
        train_log.wall_clock["joint"] = time.perf_counter() - t0
    return params, state


def pretrain(cfg: ExperimentConfig, data: TrainData, train_log: TrainLog | None = None):
    params = init_params(cfg.netspec, cfg.seed)
    state = AdamState(alpha=cfg.learning_rate)
    stage_pretrain_depth(cfg, params, state, data, train_log)
    stage_pretrain_color(cfg, params, state, data, train_log)
    return params, state


def train(cfg: ExperimentConfig, data: TrainData, pretrained=None, out_dir=None):
    """Run all stages (or only the joint one from a ``(params, state)`` pair)."""
    train_log = TrainLog(cfg.seed)
    if pretrained is None:
        params, state = pretrain(cfg, data, train_log)
    else:
        params, state = pretrained[0].copy(), _copy_state(pretrained[1])
    ckpt = None if out_dir is None else Path(out_dir) / f"model_{cfg.ablation}.xmpw"
    abort_path = None if out_dir is None else Path(out_dir) / f"model_{cfg.ablation}.aborted.xmpw"
    stage_joint_train(cfg, params, state, data, train_log, checkpoint_path=abort_path)
    if ckpt is not None:
        save_checkpoint(ckpt, params, state, {"config": cfg.to_text()})
        (Path(out_dir) / f"trainlog_{cfg.ablation}.csv").write_text(train_log.to_csv())
    return params, state, train_log


def _copy_state(state: AdamState) -> AdamState:
    return AdamState(state.alpha, state.beta1, state.beta2, state.eps_hat, state.step_count,
                     {k: v.copy() for k, v in state.m.items()},
                     {k: v.copy() for k, v in state.v.items()}, dict(state.steps))


# --- inference and evaluation --------------------------------------------------

def infer_head(params: ModelParams, color_windows: np.ndarray) -> np.ndarray:
    """Pose vectors ``h_D(g(f_C(x)))`` for ``N x 3*W*W`` color windows; f_D is never used."""
    spec = params.spec
    x = Tensor(np.atleast_2d(color_windows))
    return h_pose_forward(g_map_forward(f_color_forward(x, params.C, spec), params.g, spec),
                          params.h, spec).data


def depth_head(params: ModelParams, depth_windows: np.ndarray) -> np.ndarray:
    spec = params.spec
    x = Tensor(np.atleast_2d(depth_windows))
    return h_pose_forward(f_depth_forward(x, params.D, spec), params.h, spec).data


def _safe_pose(head16, model, intr):
    try:
        return pose_from_head_output(head16, model, intr)
    except SolverFailure as err:
        return err.best_pose
    except (CheiralityError, ContractError, np.linalg.LinAlgError):
        return None


@dataclass
class InferResult:
    head: np.ndarray
    pose: RigidPose | None = None


def infer(params: ModelParams, color_window: np.ndarray, cfg: ExperimentConfig) -> InferResult:
    """Single-window inference; object mode also recovers the rigid pose by PnP."""
    head = infer_head(params, np.asarray(color_window).reshape(1, -1))[0]
    if cfg.mode != "object" or params.spec.head_mode != "object_corners":
        if (cfg.mode == "object") != (params.spec.head_mode == "object_corners"):
            raise ContractError("checkpoint head mode does not match the configured mode")
        return InferResult(head)
    intr = cfg.intrinsics
    origin = _window_origin(cfg)
    model = cuboid_model(cfg.extents, seed=cfg.seed)
    return InferResult(head, _safe_pose(head, model, intr.window(origin[0], origin[1], cfg.window)))


def _window_origin(cfg):
    from .scene_gen import window_origin
    intr = cfg.intrinsics
    return window_origin((intr.cx, intr.cy), cfg.window)


def evaluate_heads(cfg: ExperimentConfig, heads: np.ndarray, test: Dataset) -> dict:
    """Metric values for one stream's head outputs on the test split."""
    if cfg.mode == "object":
        model = cuboid_model(cfg.extents, seed=cfg.seed)
        intr = cfg.intrinsics
        wintr = intr.window(test.origin[0], test.origin[1], test.window)
        records = [EvalRecord(_safe_pose(h, model, wintr), test.pose(i)) for i, h in enumerate(heads)]
        return {
            ("proj2d", cfg.tau_px): projection_metric(records, model.points, intr, cfg.tau_px),
            ("add", cfg.kappa): add_metric(records, model.points, model.diameter, cfg.kappa),
        }
    J = cfg.n_joints
    records = [EvalRecord(h.reshape(J, 3), y.reshape(J, 3)) for h, y in zip(heads, test.labels)]
    out = {("mean_joint_error_mm", 0.0): mean_joint_error(records, wrist_align=False),
           ("mean_joint_error_wrist_aligned_mm", 0.0): mean_joint_error(records, wrist_align=True)}
    curve = pck_curve(records, cfg.pck_thresholds_mm, cfg.wrist_align)
    for t, v in zip(curve.thresholds, curve.values):
        out[("pck", float(t))] = float(v)
    return out


def evaluate(cfg: ExperimentConfig, params: ModelParams, test: Dataset) -> list:
    """Metric rows for the color stream and the depth-stream upper bound."""
    if test.labels is None:
        raise ContractError("test split has no labels")
    streams = {"test_color": infer_head(params, test.flat([0, 1, 2])),
               "test_depth_upper": depth_head(params, test.flat([3]))}
    rows = []
    for split, heads in streams.items():
        for (metric, threshold), value in evaluate_heads(cfg, heads, test).items():
            rows.append({"metric": metric, "threshold": float(threshold), "split": split,
                         "seed": cfg.seed, "ablation": cfg.ablation, "value": value})
    return rows


def write_metrics(path, cfg: ExperimentConfig, rows):
    # the header records the run's settings; where it was written is not one of them
    header = [ln for ln in cfg.to_text().splitlines() if not ln.startswith("out_dir")]
    Path(path).write_text(metrics_csv(rows, header))


def metric_value(rows, metric: str, split: str, threshold=None) -> float:
    for r in rows:
        if r["metric"] == metric and r["split"] == split and (threshold is None or r["threshold"] == threshold):
            return r["value"]
    raise KeyError((metric, split, threshold))


# --- full run ---------------------------------------------------------------

ABLATIONS = {
    "full": {"fm_on": True, "mmd_on": True},
    "no_fm": {"fm_on": False, "mmd_on": True},
    "no_mmd": {"fm_on": True, "mmd_on": False},
}


def with_ablation(cfg: ExperimentConfig, tag: str) -> ExperimentConfig:
    if tag not in ABLATIONS:
        raise ContractError(f"unknown ablation {tag!r}")
    return cfg.replace(ablation=tag, **ABLATIONS[tag])


def run_experiment(cfg: ExperimentConfig, ablations=("full", "no_fm", "no_mmd"), out_dir=None,
                   threads: int | None = None) -> dict:
    """Generate data, pretrain once, then joint-train and evaluate every ablation.

    Returns ``{tag: rows}``; per-ablation metric CSVs are written to ``out_dir``.
    """
    from .datasets import build_datasets

    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = build_datasets(cfg, out, threads)
    data = TrainData.load(out)
    test = read_dataset(paths["test"])
    pre_log = TrainLog(cfg.seed)
    pre = pretrain(cfg, data, pre_log)
    save_checkpoint(out / "pretrained.xmpw", pre[0], pre[1], {"config": cfg.to_text()})
    results = {}
    for tag in ablations:
        acfg = with_ablation(cfg, tag)
        params, _, _ = train(acfg, data, pretrained=pre, out_dir=out)
        rows = evaluate(acfg, params, test)
        write_metrics(out / f"metrics_{tag}.csv", acfg, rows)
        results[tag] = rows
    return results
