import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmpose.errors import ContractError
from xmpose.geometry import CameraIntrinsics, RigidPose, axis_angle_to_matrix
from xmpose.metrics import (
    EvalRecord, add_errors, add_metric, mean_joint_error, metrics_csv, pck_curve,
    projection_errors, projection_metric, read_metrics_csv,
)
from xmpose.render import cuboid_model

INTR = CameraIntrinsics(130.0, 130.0, 16.0, 16.0, 32, 32)
MODEL = cuboid_model(n_points=50)


def random_pose(rng, dist=1.0):
    return RigidPose(axis_angle_to_matrix(rng.normal(size=3)),
                     np.array([*rng.normal(scale=0.05, size=2), dist]))


def loop_projection_error(points, pred, truth, intr):
    total = 0.0
    for p in points:
        a, b = pred.rotation @ p + pred.translation, truth.rotation @ p + truth.translation
        ua, va = intr.fx * a[0] / a[2] + intr.cx, intr.fy * a[1] / a[2] + intr.cy
        ub, vb = intr.fx * b[0] / b[2] + intr.cx, intr.fy * b[1] / b[2] + intr.cy
        total += np.sqrt((ua - ub) ** 2 + (va - vb) ** 2)
    return total / len(points)


def loop_add_error(points, pred, truth):
    total = 0.0
    for p in points:
        d = (pred.rotation @ p + pred.translation) - (truth.rotation @ p + truth.translation)
        total += np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    return total / len(points)


def test_identical_poses_are_correct():
    rng = np.random.default_rng(0)
    recs = [EvalRecord(p, p) for p in (random_pose(rng) for _ in range(5))]
    assert projection_metric(recs, MODEL.points, INTR) == 1.0
    assert add_metric(recs, MODEL.points, MODEL.diameter) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_errors_match_loop_oracles(seed):
    rng = np.random.default_rng(seed)
    recs = [EvalRecord(random_pose(rng), random_pose(rng)) for _ in range(4)]
    proj = projection_errors(recs, MODEL.points, INTR)
    add = add_errors(recs, MODEL.points)
    for i, r in enumerate(recs):
        assert abs(proj[i] - loop_projection_error(MODEL.points, r.predicted, r.truth, INTR)) <= 1e-12 * max(1, proj[i])
        assert abs(add[i] - loop_add_error(MODEL.points, r.predicted, r.truth)) <= 1e-12


def test_projection_classification_flips_at_tau():
    truth = RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    pred = RigidPose(np.eye(3), np.array([0.02, 0.0, 1.0]))
    err = loop_projection_error(MODEL.points, pred, truth, INTR)  # 2.6 px for a pure shift
    rec = [EvalRecord(pred, truth)]
    assert projection_metric(rec, MODEL.points, INTR, tau_px=err + 1e-9) == 1.0
    assert projection_metric(rec, MODEL.points, INTR, tau_px=err - 1e-9) == 0.0


def test_add_translation_offset_is_exact():
    rng = np.random.default_rng(3)
    truth = random_pose(rng)
    delta = np.array([0.003, -0.004, 0.0])
    pred = RigidPose(truth.rotation, truth.translation + delta)
    assert abs(add_errors([EvalRecord(pred, truth)], MODEL.points)[0] - 0.005) <= 1e-15


def test_contract_errors():
    truth = RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ContractError):
        projection_metric([EvalRecord(truth, truth)], np.zeros((0, 3)), INTR)
    with pytest.raises(ContractError):
        add_metric([], MODEL.points, MODEL.diameter)
    with pytest.raises(ContractError):
        add_metric([EvalRecord(truth, truth)], MODEL.points, 0.0)
    with pytest.raises(ContractError):
        pck_curve([EvalRecord(truth, truth)], [10])


def test_missing_prediction_counts_as_wrong():
    truth = RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    recs = [EvalRecord(None, truth), EvalRecord(truth, truth)]
    assert projection_metric(recs, MODEL.points, INTR) == 0.5


def test_order_invariance_and_threshold_product():
    rng = np.random.default_rng(7)
    recs = [EvalRecord(random_pose(rng), random_pose(rng)) for _ in range(6)]
    recs += [EvalRecord(r.truth, r.truth) for r in recs[:3]]
    rev = recs[::-1]
    assert projection_metric(recs, MODEL.points, INTR, 50) == projection_metric(rev, MODEL.points, INTR, 50)
    assert add_metric(recs, MODEL.points, MODEL.diameter) == add_metric(rev, MODEL.points, MODEL.diameter)
    for c in (0.5, 4.0, 12.0):
        assert add_metric(recs, MODEL.points, MODEL.diameter, 0.1 * c) == \
            add_metric(recs, MODEL.points, MODEL.diameter * c, 0.1)


def test_pck_examples():
    rng = np.random.default_rng(0)
    truth = [rng.normal(scale=50, size=(6, 3)) for _ in range(4)]
    perfect = [EvalRecord(t.copy(), t) for t in truth]
    assert pck_curve(perfect, [0.5, 10, 20]).values.tolist() == [1.0, 1.0, 1.0]
    off = [EvalRecord(t.copy(), t) for t in truth]
    off[2].predicted[3] += np.array([0.0, 30.0, 0.0])
    curve = pck_curve(off, [20, 40], wrist_align=False)
    assert curve.values.tolist() == [23 / 24, 1.0]
    assert pck_curve(off, [np.inf], wrist_align=False).values[0] == 1.0
    assert pck_curve(off, [0.0], wrist_align=False).values[0] == 0.0


def test_mean_joint_error_examples():
    t = np.random.default_rng(1).normal(size=(6, 3))
    assert mean_joint_error([EvalRecord(t.copy(), t)]) == 0.0
    shift = np.array([6.0, 8.0, 0.0])
    assert mean_joint_error([EvalRecord(t + shift, t)]) == pytest.approx(10.0, abs=1e-12)
    # a uniform shift disappears after wrist alignment
    assert mean_joint_error([EvalRecord(t + shift, t)], wrist_align=True) == pytest.approx(0.0, abs=1e-12)


def test_mean_joint_error_loop_oracle():
    rng = np.random.default_rng(2)
    recs = [EvalRecord(rng.normal(size=(6, 3)), rng.normal(size=(6, 3))) for _ in range(5)]
    total, n = 0.0, 0
    for r in recs:
        for j in range(6):
            d = r.predicted[j] - r.truth[j]
            total += np.sqrt(d @ d)
            n += 1
    assert abs(mean_joint_error(recs) - total / n) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=1, max_size=8), st.integers(0, 100))
def test_pck_non_decreasing(thresholds, seed):
    rng = np.random.default_rng(seed)
    recs = [EvalRecord(rng.normal(scale=40, size=(6, 3)), rng.normal(scale=40, size=(6, 3)))
            for _ in range(3)]
    v = pck_curve(recs, thresholds).values
    assert (np.diff(v) >= 0).all() and v.min() >= 0 and v.max() <= 1


def test_csv_roundtrip():
    rows = [{"metric": "proj2d", "threshold": 5.0, "split": "test_color", "seed": 0,
             "ablation": "full", "value": 1 / 3}]
    text = metrics_csv(rows, ["seed = 0", "mode = object"])
    assert text.startswith("# seed = 0\n# mode = object\nmetric,threshold,split,seed,ablation,value\n")
    back = read_metrics_csv(text)
    assert back[0]["value"] == 1 / 3 and back[0]["ablation"] == "full"
