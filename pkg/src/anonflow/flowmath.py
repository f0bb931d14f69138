"""Flow-matching primitives: interpolation paths, the conditional
flow-matching loss, and fixed-step Euler integration in either time
direction.

All functions are pure; randomness enters only through an explicitly
passed ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InputError


@dataclass(frozen=True)
class FlowSample:
    """One point on a straight interpolation path between noise and data."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    u_target: np.ndarray


@dataclass(frozen=True)
class IntegrationSpec:
    """Fixed-step Euler integration plan. ``t_end < t_start`` integrates backward."""

    steps: int = 16
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise InputError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 <= self.t_start <= 1.0 and 0.0 <= self.t_end <= 1.0):
            raise InputError("t_start and t_end must lie in [0, 1]")
        if self.t_start == self.t_end:
            raise InputError("t_start and t_end must differ")


def interpolate(x0, x1, t: float) -> FlowSample:
    """Place a sample at time ``t`` on the straight path from ``x0`` to ``x1``."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise InputError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    if not (0.0 <= t <= 1.0):
        raise InputError(f"t must lie in [0, 1], got {t}")
    xt = (1.0 - t) * x0 + t * x1
    return FlowSample(x0=x0, x1=x1, t=float(t), xt=xt, u_target=x1 - x0)


def cfm_loss(field, x1: np.ndarray, cond, rng: np.random.Generator):
    """Conditional flow-matching loss on one batch.

    ``x1`` is (B, d); ``cond`` is forwarded to the field unchanged (may be
    None or a batched array / tuple of arrays).  Noise endpoints are drawn
    standard normal and times uniform on [0, 1), in that order, so a test
    with the same generator state can reproduce the draws.

    Returns ``(loss, grads)`` where grads is a parameter-gradient dict when
    the field supports reverse mode (has ``forward``/``backward``), else None.
    """
    x1 = np.asarray(x1, dtype=float)
    if x1.ndim != 2 or x1.shape[0] == 0:
        raise InputError("batch must be a non-empty (B, d) array")
    b, d = x1.shape
    x0 = rng.standard_normal((b, d))
    t = rng.uniform(0.0, 1.0, size=b)
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    u = x1 - x0

    if hasattr(field, "forward") and hasattr(field, "backward"):
        pred, cache = field.forward(xt, t, cond)
        resid = pred - u
        loss = float(np.mean(resid**2))
        grads = field.backward(cache, (2.0 / resid.size) * resid)
        return loss, grads
    pred = field(xt, t, cond)
    resid = np.asarray(pred) - u
    return float(np.mean(resid**2)), None


def integrate(field, x_init: np.ndarray, spec: IntegrationSpec, cond=None) -> np.ndarray:
    """Explicit Euler integration of ``dx/dt = field(x, t, cond)``.

    ``x_init`` may be a single vector or a (B, d) batch; the result has the
    same shape.  A negative step (``t_end < t_start``) realizes backward
    integration.
    """
    x = np.asarray(x_init, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    h = (spec.t_end - spec.t_start) / spec.steps
    t = spec.t_start
    for k in range(spec.steps):
        tb = np.full(x.shape[0], t)
        v = np.asarray(field(x, tb, cond))
        x = x + h * v
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step {k}", step=k)
        t += h
    return x[0] if single else x
