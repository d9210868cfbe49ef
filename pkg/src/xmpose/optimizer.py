"""ADAM with bias-corrected moments over named parameter tensors."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NonFiniteError

REFERENCE_LEARNING_RATE = 1e-4


@dataclass
class AdamState:
    alpha: float = REFERENCE_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    # per-parameter step counts, so masked stages keep correct bias correction
    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        if self.alpha <= 0 or self.eps_hat <= 0:
            raise ContractError("alpha and eps_hat must be positive")

    def drop(self, prefix: str):
        """Forget moments for every parameter path starting with ``prefix``."""
        for d in (self.m, self.v, self.steps):
            for k in [k for k in d if k.startswith(prefix)]:
                del d[k]


def adam_step(params: dict, grads: dict, state: AdamState, mask=None) -> AdamState:
    """Update ``params`` (path -> Tensor) in place from ``grads`` (path -> array).

    ``mask`` is an optional collection of path prefixes; parameters outside it
    are neither moved nor have their moments touched. The whole step is
    rejected before any mutation if a gradient is missing or non-finite.
    """
    active = [k for k in params if mask is None or any(k.startswith(p) for p in mask)]
    for k in active:
        if k not in grads:
            raise ContractError(f"no gradient supplied for parameter {k}")
        g = grads[k]
        if g.shape != params[k].shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {params[k].shape} at {k}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient at parameter {k}; step aborted")
    b1, b2 = state.beta1, state.beta2
    for k in active:
        g = grads[k]
        p = params[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
            state.steps[k] = 0
        t = state.steps[k] + 1
        state.steps[k] = t
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = v / (1.0 - b2 ** t)
        np.sqrt(denom, out=denom)
        denom += state.eps_hat
        step = m / (1.0 - b1 ** t)
        step *= state.alpha
        step /= denom
        p.data -= step
    state.step_count += 1
    return state


# --- serialization, appended to the XMPW checkpoint -----------------------
#
# u32 len + JSON {alpha, beta1, beta2, eps_hat, step_count, steps}
# tensor block of first moments, tensor block of second moments


def write_state(buf, state: AdamState):
    from .networks import write_tensor_block

    header = {"alpha": state.alpha, "beta1": state.beta1, "beta2": state.beta2,
              "eps_hat": state.eps_hat, "step_count": state.step_count, "steps": state.steps}
    raw = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    write_tensor_block(buf, state.m)
    write_tensor_block(buf, state.v)


def read_state(buf) -> AdamState:
    from .networks import _read_exact, read_tensor_block

    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    header = json.loads(_read_exact(buf, n))
    m = read_tensor_block(buf)
    v = read_tensor_block(buf)
    return AdamState(alpha=header["alpha"], beta1=header["beta1"], beta2=header["beta2"],
                     eps_hat=header["eps_hat"], step_count=header["step_count"],
                     m=m, v=v, steps={k: int(s) for k, s in header["steps"].items()})
