"""Self-checks behind the ``gradcheck`` and ``mmdcheck`` commands.

Both return plain dicts of measured values plus a ``passed`` flag so the CLI
and the test suite can share them.
"""

from __future__ import annotations

import time

import numpy as np

from .autodiff import backward, finite_difference_grad, relu_pattern
from .losses import BatchTriple, LossWeights, combine, loss_terms, mmd_features, rbf_kernel
from .networks import NetSpec, init_params

GRAD_TOL = 1e-4
# Central differences at eps=1e-5 carry roughly 1e-11 of absolute rounding noise
# for an O(1) loss, so relative error is measured against at least this scale.
GRAD_FLOOR = 1e-6


def random_batch(spec: NetSpec, rng: np.random.Generator, n: int = 4) -> BatchTriple:
    """Windows in [-1, 1] and unit-scale labels, so the loss stays O(1)."""
    return BatchTriple(
        rng.uniform(-1, 1, size=(n, spec.input_dim)),
        rng.normal(size=(n, spec.output_dim)),
        rng.uniform(-1, 1, size=(n, spec.color_input_dim)),
        rng.uniform(-1, 1, size=(n, spec.input_dim)),
    )


def gradcheck_objective(seed: int, spec: NetSpec | None = None, coords_per_tensor: int = 6,
                        eps: float = 1e-5, weights: LossWeights = LossWeights()) -> dict:
    """Compare backward() with central differences on the full weighted objective.

    A random subset of coordinates is checked per parameter tensor. Coordinates
    whose perturbation flips any relu input sign are skipped, since the loss is
    not differentiable across the kink.
    """
    spec = spec or NetSpec()
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    # nonzero g weights so the mapping network is exercised
    for name, t in params.g.items():
        if name.startswith("w"):
            t.data[:] = rng.normal(scale=0.05, size=t.shape)
    batch = random_batch(spec, rng)

    def graph():
        return combine(loss_terms(batch, params, weights), weights)

    named = params.named()
    analytic = backward(graph(), named.values())
    worst, checked, skipped = 0.0, 0, 0
    for path, t in named.items():
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = relu_pattern(graph())
            flat[i] = orig - eps
            down = relu_pattern(graph())
            flat[i] = orig
            if up != down:
                skipped += 1
                continue
            num = finite_difference_grad(lambda: graph().item(), [t], eps, {t: [i]})[t].reshape(-1)[i]
            ana = analytic[t].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR)
            worst = max(worst, rel)
            checked += 1
    return {"seed": seed, "max_rel_error": worst, "checked": checked, "skipped": skipped}


def run_gradcheck(seeds=range(10), spec: NetSpec | None = None) -> dict:
    t0 = time.perf_counter()
    per_seed = [gradcheck_objective(s, spec) for s in seeds]
    worst = max(r["max_rel_error"] for r in per_seed)
    return {"per_seed": per_seed, "max_rel_error": worst, "seconds": time.perf_counter() - t0,
            "passed": worst <= GRAD_TOL}


def mmd_double_loop(a: np.ndarray, b: np.ndarray, sigma: float = 1.0) -> float:
    """Reference biased MMD from explicit kernel sums."""
    n, m = len(a), len(b)
    kaa = sum(rbf_kernel(a[i], a[j], sigma) for i in range(n) for j in range(n))
    kab = sum(rbf_kernel(a[i], b[j], sigma) for i in range(n) for j in range(m))
    kbb = sum(rbf_kernel(b[i], b[j], sigma) for i in range(m) for j in range(m))
    return kaa / n ** 2 - 2.0 * kab / (n * m) + kbb / m ** 2


def mmd_shift_curve(shifts=(0.0, 0.5, 1.0, 2.0), seeds=range(5), n: int = 256, dim: int = 8,
                    sigma: float = 1.0) -> list:
    """Seed-averaged MMD between unit Gaussian clouds whose means differ by ``shift``."""
    out = []
    for shift in shifts:
        vals = []
        for s in seeds:
            rng = np.random.default_rng(s)
            a = rng.normal(size=(n, dim))
            b = rng.normal(size=(n, dim))
            b[:, 0] += shift
            vals.append(mmd_features(a, b, sigma).item())
        out.append(float(np.mean(vals)))
    return out


def run_mmdcheck(seed: int = 0) -> dict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 5))
    identical = mmd_features(x, x.copy()).item()
    worst_negative = 0.0
    worst_oracle = 0.0
    for _ in range(20):
        n, m = rng.integers(1, 9, size=2)
        a = rng.normal(scale=rng.uniform(0.1, 2.0), size=(n, 4))
        b = rng.normal(scale=rng.uniform(0.1, 2.0), size=(m, 4)) + rng.normal(scale=0.5)
        v = mmd_features(a, b).item()
        worst_negative = min(worst_negative, v)
        worst_oracle = max(worst_oracle, abs(v - mmd_double_loop(a, b)))
    closed = mmd_features(np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]])).item()
    closed_err = abs(closed - (2.0 - 2.0 * np.exp(-1.0)))
    curve = mmd_shift_curve()
    monotone = all(b > a for a, b in zip(curve, curve[1:]))
    passed = (identical == 0.0 and worst_negative >= -1e-12 and worst_oracle <= 1e-10
              and closed_err <= 1e-12 and monotone)
    return {"identical": identical, "min_value": worst_negative, "oracle_error": worst_oracle,
            "closed_form_error": closed_err, "shift_curve": curve, "monotone": monotone,
            "seconds": time.perf_counter() - t0, "passed": passed}
