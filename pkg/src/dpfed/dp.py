"""Gradient privatization and optimizer steps.

The private pipeline is: clip each per-sample gradient to L2 norm at most
S, sum, add isotropic Gaussian noise with per-coordinate standard
deviation sigma * S, divide by the configured lot size. The result feeds
either a plain descent step or an Adam update; noising happens before the
optimizer, so both variants carry the same privacy cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import MlpModel, PerSampleGrads

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class DpSpec:
    """Clipping bound S and noise multiplier sigma."""

    clip_norm: float
    noise_multiplier: float

    def __post_init__(self):
        if not (self.clip_norm > 0):
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    """Learning rate, lot size, epoch count and base optimizer for a run.

    The optimizer names the non-private update rule; private modes wrap it
    in the clip-and-noise pipeline automatically.
    """

    learning_rate: float = 0.001
    lot_size: int = 1024
    epochs: int = 50
    optimizer: str = "adam"

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.lot_size < 1:
            raise ValueError("lot_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be sgd or adam")


@dataclass
class AdamState:
    """First/second moment estimates and step counter for Adam."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, n_params: int, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> "AdamState":
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        return cls(m=np.zeros(n_params), v=np.zeros(n_params),
                   beta1=beta1, beta2=beta2, eps=eps)


@dataclass
class StepReport:
    """Diagnostics for one privatized step.

    The pre-clip norms support the clipping-bound selection heuristic of
    taking their running median; noise_seed identifies the noise stream
    the step drew from.
    """

    pre_clip_norms: np.ndarray
    clipped_fraction: float
    noise_seed: int
    grad_norm_after: float
    step_loss: float = field(default=float("nan"))


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale g to L2 norm at most clip_norm: g / max(1, ||g|| / S)."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    if not (clip_norm > 0):
        raise ValueError("clip_norm must be positive")
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / clip_norm)


def noisy_mean(grads: PerSampleGrads, spec: DpSpec, lot_size: int,
               rng: np.random.Generator, noise_seed: int = 0
               ) -> tuple[np.ndarray, StepReport]:
    """Privatized mean gradient of a lot: (sum of clipped grads + noise) / L.

    Noise is i.i.d. Gaussian per coordinate with std sigma * S. The divisor
    is the configured lot size, not the realized batch size, so the noise
    scale matches what the accountant assumes for partial lots.
    """
    if lot_size < 1:
        raise ValueError("lot_size must be >= 1")
    g = grads.grads
    norms = np.linalg.norm(g, axis=1)
    with np.errstate(divide="ignore"):
        factors = np.minimum(1.0, spec.clip_norm / norms)
    factors[norms == 0.0] = 1.0
    clipped_sum = (g * factors[:, None]).sum(axis=0)
    if spec.noise_multiplier > 0:
        noise = rng.normal(0.0, spec.noise_multiplier * spec.clip_norm, size=g.shape[1])
        total = clipped_sum + noise
    else:
        total = clipped_sum
    mean = total / lot_size
    report = StepReport(
        pre_clip_norms=norms,
        clipped_fraction=float(np.mean(norms > spec.clip_norm)),
        noise_seed=noise_seed,
        grad_norm_after=float(np.linalg.norm(mean)),
    )
    return mean, report


def exact_mean(grads: PerSampleGrads) -> np.ndarray:
    """Plain mean gradient; shares the summation path of noisy_mean so the
    sigma=0, large-S private run reduces to it bit-for-bit."""
    return grads.grads.sum(axis=0) / grads.batch_size


def _check_length(model: MlpModel, grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape:
        raise ValueError(f"gradient length {grad.size} != parameter count {model.params.size}")
    return grad


def sgd_step(model: MlpModel, grad: np.ndarray, eta: float) -> MlpModel:
    """In-place descent step: params -= eta * grad."""
    grad = _check_length(model, grad)
    model.params -= eta * grad
    return model


def adam_step(model: MlpModel, adam: AdamState, grad: np.ndarray, eta: float
              ) -> tuple[MlpModel, AdamState]:
    """In-place Adam update with bias correction."""
    grad = _check_length(model, grad)
    if adam.m.shape != model.params.shape:
        raise ValueError("Adam state dimension does not match the model")
    adam.t += 1
    adam.m = adam.beta1 * adam.m + (1.0 - adam.beta1) * grad
    adam.v = adam.beta2 * adam.v + (1.0 - adam.beta2) * grad * grad
    m_hat = adam.m / (1.0 - adam.beta1 ** adam.t)
    v_hat = adam.v / (1.0 - adam.beta2 ** adam.t)
    model.params -= eta * m_hat / (np.sqrt(v_hat) + adam.eps)
    return model, adam


# The privatized variants run the same arithmetic as the plain steps; the
# privacy comes from what was done to the gradient beforehand.
dp_sgd_step = sgd_step
dp_adam_step = adam_step
