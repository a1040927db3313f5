"""Minibatch training loop shared by the centralized and federated paths.

One function drives every optimizer variant: plain SGD/Adam on the exact
mean gradient, or the privatized pipeline (per-sample clip, Gaussian
noise, fixed-lot divisor). A proximal pull toward a reference parameter
vector turns the plain loop into the generalized local objective used by
proximal federated updates.

Randomness is split into named streams derived from a root seed so batch
order and noise can be reproduced independently of each other.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dp, nn

logger = logging.getLogger(__name__)

# stream tags for deriving independent generators from one root seed
STREAM_ORDER = 1
STREAM_NOISE = 2
STREAM_PARTITION = 3
STREAM_SELECT = 4

OPTIMIZERS = ("sgd", "adam", "dp-sgd", "dp-adam")


def stream(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for (seed, *path); distinct paths are independent."""
    if seed < 0 or any(p < 0 for p in path):
        raise ValueError("seed and stream path entries must be non-negative")
    return np.random.default_rng(np.random.SeedSequence((seed, *path)))


def apply_prox(grad: np.ndarray, params: np.ndarray, reference: np.ndarray,
               mu: float) -> np.ndarray:
    """Add the proximal pull mu * (params - reference) to a gradient."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if mu == 0:
        return grad
    return grad + mu * (params - reference)


@dataclass
class TrainStats:
    """Outcome of one train_local call."""

    steps: int
    mean_loss: float
    budget_exhausted: bool = False
    reports: list[dp.StepReport] = field(default_factory=list)


def _lot_indices(n: int, batch_size: int, sampling: str,
                 order_rng: np.random.Generator):
    """Yield index arrays for one epoch of lots.

    Shuffle mode: a seeded permutation cut into contiguous lots; a single
    full-size lot skips the permutation so full-batch runs are canonical.
    Poisson mode: each sample joins each lot independently with
    probability batch_size / n; lots may be empty.
    """
    if sampling == "shuffle":
        order = np.arange(n) if batch_size >= n else order_rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
    elif sampling == "poisson":
        q = min(1.0, batch_size / n)
        for _ in range(math.ceil(n / batch_size)):
            yield np.flatnonzero(order_rng.random(n) < q)
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")


def train_local(
    model: nn.MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    *,
    batch_size: int,
    epochs: int,
    eta: float,
    optimizer: str = "sgd",
    dp_spec: dp.DpSpec | None = None,
    prox_mu: float = 0.0,
    prox_reference: np.ndarray | None = None,
    sampling: str = "shuffle",
    order_rng: np.random.Generator,
    noise_rng: np.random.Generator | None = None,
    adam: dp.AdamState | None = None,
    max_steps: int | None = None,
    noise_seed: int = 0,
) -> TrainStats:
    """Train the model in place for the given epochs; returns step stats.

    ``max_steps`` caps the number of optimizer steps (a privacy budget
    turned into a step allowance); the loop stops mid-epoch when the cap
    is reached and flags the stats as budget-exhausted.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
    private = optimizer.startswith("dp-")
    if private and dp_spec is None:
        raise ValueError("private optimizers need a DpSpec")
    if private and noise_rng is None:
        raise ValueError("private optimizers need a dedicated noise stream")
    if optimizer.endswith("adam") and adam is None:
        adam = dp.AdamState.zeros(model.config.n_params)
    if prox_mu > 0 and prox_reference is None:
        raise ValueError("proximal training needs a reference parameter vector")

    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")

    steps = 0
    losses: list[float] = []
    reports: list[dp.StepReport] = []
    exhausted = False

    for _ in range(epochs):
        for idx in _lot_indices(n, batch_size, sampling, order_rng):
            if max_steps is not None and steps >= max_steps:
                exhausted = True
                break
            if idx.size == 0:
                # empty Poisson lot: the release is pure noise
                if private:
                    grad = _noise_only(model, dp_spec, batch_size, noise_rng)
                    step_loss = math.nan
                else:
                    continue
            else:
                logits, cache = nn.forward(model, features[idx])
                step_loss, _ = nn.cross_entropy(logits, labels[idx])
                grads = nn.backward_per_sample(model, cache, labels[idx])
                if private:
                    grad, report = dp.noisy_mean(grads, dp_spec, batch_size,
                                                 noise_rng, noise_seed=noise_seed)
                    report.step_loss = step_loss
                    reports.append(report)
                    if logger.isEnabledFor(logging.DEBUG):
                        # the running median of pre-clip norms guides the
                        # choice of the clipping bound
                        logger.debug(
                            "step %d: median pre-clip norm %.4g, clipped %.1f%%",
                            steps, float(np.median(report.pre_clip_norms)),
                            100.0 * report.clipped_fraction)
                else:
                    grad = dp.exact_mean(grads)
            grad = apply_prox(grad, model.params, prox_reference, prox_mu)
            if optimizer.endswith("adam"):
                dp.adam_step(model, adam, grad, eta)
            else:
                dp.sgd_step(model, grad, eta)
            steps += 1
            if not math.isnan(step_loss):
                losses.append(step_loss)
        if exhausted:
            break

    mean_loss = float(np.mean(losses)) if losses else math.nan
    return TrainStats(steps=steps, mean_loss=mean_loss,
                      budget_exhausted=exhausted, reports=reports)


def _noise_only(model: nn.MlpModel, spec: dp.DpSpec, lot_size: int,
                noise_rng: np.random.Generator) -> np.ndarray:
    if spec.noise_multiplier > 0:
        z = noise_rng.normal(0.0, spec.noise_multiplier * spec.clip_norm,
                             size=model.config.n_params)
        return z / lot_size
    return np.zeros(model.config.n_params)
