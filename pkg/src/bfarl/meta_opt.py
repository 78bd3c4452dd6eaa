"""Bi-level trainer: one-step-forward inner updates, meta updates, actual steps.

Each step t works on one mini-batch:

  1. inner:  w_fwd = w - eta * dL/dw            (at the current meta params)
  2. meta:   descend (alpha, beta) on g(m) = L(w_fwd(m); m), where the
             total derivative over the four meta scalars is taken by
             central finite differences (the inner update is re-run at
             each perturbed point, so both the direct and the indirect
             path are captured)
  3. actual: w = w - gamma * dL/dw              (at the updated meta params)

The same mini-batch serves all three stages.  Mini-batches come from a
seeded once-per-epoch shuffle; the final partial batch is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .losses import (GroupLabelMarginals, MetaParams, bfarl_loss,
                     estimate_marginals, loss_fn_from_scalars,
                     make_bfarl_loss_fn)
from .model import (Gradients, ModelParams, TrainConfig, forward_batch, grad,
                    init_params, sgd_step)

META_FD_STEP = 1e-4


class NumericError(ArithmeticError):
    """A loss or gradient went non-finite; message carries step provenance."""


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray


@dataclass
class MetaTrace:
    """Per-step observability: meta values and the three stage losses."""

    steps: list = field(default_factory=list)

    def append(self, step: int, meta: MetaParams, inner_loss: float,
               meta_loss: float, actual_loss: float) -> None:
        if self.steps and step <= self.steps[-1]["step"]:
            raise ValueError("step indices must be strictly increasing")
        self.steps.append({
            "step": step,
            "alpha": list(meta.alpha),
            "beta": list(meta.beta),
            "inner_loss": float(inner_loss),
            "meta_loss": float(meta_loss),
            "actual_loss": float(actual_loss),
        })

    def final_meta(self) -> MetaParams:
        last = self.steps[-1]
        return MetaParams(tuple(last["alpha"]), tuple(last["beta"]))

    def summary(self) -> dict:
        last = self.steps[-1]
        return {
            "final_alpha": last["alpha"],
            "final_beta": last["beta"],
            "beta_norm": float(np.hypot(*last["beta"])),
            "steps": len(self.steps),
        }


def _loss_value(params: ModelParams, batch: Batch, meta: MetaParams,
                marginals: GroupLabelMarginals) -> float:
    probs, _, _ = forward_batch(params, batch.x)
    return bfarl_loss(probs, batch.y, batch.a, meta, marginals)


def _loss_value_vec(params: ModelParams, batch: Batch, vec: np.ndarray,
                    marginals: GroupLabelMarginals) -> float:
    """Objective value with raw meta scalars, bypassing MetaParams validation."""
    probs, logits, _ = forward_batch(params, batch.x)
    values, _ = loss_fn_from_scalars(*vec, marginals)(probs, logits, batch.y, batch.a)
    return float(np.mean(values))


def inner_step(params: ModelParams, meta: MetaParams, batch: Batch, eta: float,
               marginals: GroupLabelMarginals, step: int | None = None) -> ModelParams:
    """One-step-forward weights at the current meta params."""
    g = grad(params, batch.x, batch.y, batch.a, make_bfarl_loss_fn(meta, marginals))
    out = sgd_step(params, g, eta)
    loss = _loss_value(out, batch, meta, marginals)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite inner loss at step {step}")
    return out


def actual_step(params: ModelParams, meta: MetaParams, batch: Batch, gamma: float,
                marginals: GroupLabelMarginals, step: int | None = None) -> ModelParams:
    """Same mechanics as inner_step, with the actual-training rate gamma."""
    g = grad(params, batch.x, batch.y, batch.a, make_bfarl_loss_fn(meta, marginals))
    out = sgd_step(params, g, gamma)
    loss = _loss_value(out, batch, meta, marginals)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite actual-training loss at step {step}")
    return out


def _grad_vec(params: ModelParams, batch: Batch, vec: np.ndarray,
              marginals: GroupLabelMarginals) -> Gradients:
    return grad(params, batch.x, batch.y, batch.a,
                loss_fn_from_scalars(*vec, marginals))


def meta_gradient(params: ModelParams, meta: MetaParams, batch: Batch, eta: float,
                  marginals: GroupLabelMarginals, fd_step: float = META_FD_STEP) -> np.ndarray:
    """Central-difference total derivative of g(m) = L(w_fwd(m); m) over the
    four meta scalars (alpha_0, alpha_1, beta_0, beta_1).

    Step size is fd_step relative to each scalar's magnitude, floored at
    fd_step itself.
    """

    def g_of(vec: np.ndarray) -> float:
        gr = _grad_vec(params, batch, vec, marginals)
        w_fwd = sgd_step(params, gr, eta)
        return _loss_value_vec(w_fwd, batch, vec, marginals)

    v0 = meta.as_vector()
    out = np.empty(4)
    for j in range(4):
        h = fd_step * max(1.0, abs(v0[j]))
        vp, vm = v0.copy(), v0.copy()
        vp[j] += h
        vm[j] -= h
        out[j] = (g_of(vp) - g_of(vm)) / (2.0 * h)
    return out


def meta_step(params: ModelParams, meta: MetaParams, batch: Batch, eta: float,
              eta_prime: float, marginals: GroupLabelMarginals,
              step: int | None = None) -> MetaParams:
    """Gradient-descent update of (alpha, beta); alpha is clamped to >= 0."""
    if eta_prime == 0.0:
        return meta
    g = meta_gradient(params, meta, batch, eta, marginals)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite meta gradient at step {step}")
    v = meta.as_vector() - eta_prime * g
    v[0] = max(v[0], 0.0)
    v[1] = max(v[1], 0.0)
    return MetaParams.from_vector(v)


class _BatchScheduler:
    """Seeded once-per-epoch shuffle; yields index arrays, keeping the tail."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._queue: list[np.ndarray] = []

    def next(self) -> np.ndarray:
        if not self._queue:
            perm = self.rng.permutation(self.n)
            self._queue = [perm[i:i + self.batch_size]
                           for i in range(0, self.n, self.batch_size)]
        return self._queue.pop(0)


def _training_rngs(seed: int) -> tuple[np.random.SeedSequence, np.random.Generator]:
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return init_ss, np.random.default_rng(shuffle_ss)


def train(dataset: Dataset, config: TrainConfig,
          init_meta: MetaParams = MetaParams()) -> tuple[ModelParams, MetaParams, MetaTrace]:
    """Run the full bi-level loop for config.steps mini-batch steps.

    Label marginals are estimated once from the whole observed training
    set.  Deterministic for a fixed (dataset, config, init_meta).
    """
    if dataset.n == 0:
        raise ValueError("dataset must be nonempty")
    marginals = estimate_marginals(dataset.y, dataset.a)
    init_ss, shuffle_rng = _training_rngs(config.seed)
    params = init_params(dataset.d, config.hidden_sizes, config.activation, init_ss)
    scheduler = _BatchScheduler(dataset.n, config.batch_size, shuffle_rng)
    meta = init_meta
    trace = MetaTrace()
    for t in range(1, config.steps + 1):
        idx = scheduler.next()
        batch = Batch(dataset.features[idx], dataset.y[idx], dataset.a[idx])
        w_fwd = inner_step(params, meta, batch, config.eta, marginals, step=t)
        inner_loss = _loss_value(w_fwd, batch, meta, marginals)
        meta = meta_step(params, meta, batch, config.eta, config.eta_prime,
                         marginals, step=t)
        if config.eta_prime == 0.0:
            meta_loss = inner_loss
        else:
            w_fwd_new = inner_step(params, meta, batch, config.eta, marginals, step=t)
            meta_loss = _loss_value(w_fwd_new, batch, meta, marginals)
        params = actual_step(params, meta, batch, config.gamma, marginals, step=t)
        actual_loss = _loss_value(params, batch, meta, marginals)
        for name, val in (("inner", inner_loss), ("meta", meta_loss), ("actual", actual_loss)):
            if not np.isfinite(val):
                raise NumericError(f"non-finite {name} loss at step {t}")
        trace.append(t, meta, inner_loss, meta_loss, actual_loss)
    return params, meta, trace


def train_plain(dataset: Dataset, config: TrainConfig) -> ModelParams:
    """Plain SGD on mean cross-entropy with the same init and batch schedule.

    Identical to train() with meta frozen at alpha=(1,1), beta=(0,0): the
    group weights multiply by one and the regularizers by zero, so the
    per-step gradients agree bit for bit.
    """
    if dataset.n == 0:
        raise ValueError("dataset must be nonempty")
    marginals = estimate_marginals(dataset.y, dataset.a)
    frozen = MetaParams((1.0, 1.0), (0.0, 0.0))
    init_ss, shuffle_rng = _training_rngs(config.seed)
    params = init_params(dataset.d, config.hidden_sizes, config.activation, init_ss)
    scheduler = _BatchScheduler(dataset.n, config.batch_size, shuffle_rng)
    for t in range(1, config.steps + 1):
        idx = scheduler.next()
        batch = Batch(dataset.features[idx], dataset.y[idx], dataset.a[idx])
        params = actual_step(params, frozen, batch, config.gamma, marginals, step=t)
    return params
