"""AdamW with decoupled weight decay and the three-phase learning-rate ramp."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import NeuralError, ParamStore


class NonFiniteGradientError(NeuralError):
    pass


@dataclass
class AdamWState:
    """First/second moment estimates per parameter plus a shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray],
               state: AdamWState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0,
               reinitialized_only: bool = False) -> None:
    """Apply one AdamW update in place.

    theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta

    Weight decay is decoupled (applied directly to the parameter, not mixed
    into the gradient). Non-trainable entries are never touched; with
    reinitialized_only=True the update is masked to parameters flagged as
    reinitialized (the warm-up phase). Masked parameters keep their moment
    state untouched as well.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.items():
        if not p.trainable:
            continue
        if reinitialized_only and not p.reinitialized:
            continue
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros(p.data.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.data.shape, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g**2
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data.astype(np.float64)
        p.data[...] -= (lr * update).astype(p.data.dtype)


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-linear ramp: warm up from lr_min to lr_max, hold, then decay
    back to lr_min by the final step."""

    total_steps: int
    lr_min: float = 1e-5
    lr_max: float = 1e-4
    warmup_frac: float = 0.03
    hold_frac: float = 0.47

    def __post_init__(self):
        if self.total_steps < 1:
            raise NeuralError("total_steps must be positive")
        if not (0.0 < self.lr_min <= self.lr_max):
            raise NeuralError("need 0 < lr_min <= lr_max")
        if self.warmup_frac < 0 or self.hold_frac < 0 \
                or self.warmup_frac + self.hold_frac > 1.0:
            raise NeuralError("phase fractions must be nonnegative and sum to <= 1")

    def lr_at(self, step: int) -> float:
        if not (0 <= step <= self.total_steps):
            raise NeuralError(f"step {step} outside 0..{self.total_steps}")
        warm_end = self.warmup_frac * self.total_steps
        hold_end = warm_end + self.hold_frac * self.total_steps
        span = self.lr_max - self.lr_min
        if step < warm_end:
            return self.lr_min + span * step / warm_end
        if step <= hold_end:
            return self.lr_max
        decay_span = self.total_steps - hold_end
        if decay_span <= 0.0:
            return self.lr_max
        return self.lr_max - span * (step - hold_end) / decay_span
