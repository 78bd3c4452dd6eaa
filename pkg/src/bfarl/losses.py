"""Group-weighted sample loss with group-conditional expectation regularizers.

The training objective over a batch of n rows is

    L(w) = (1/n) [ a0 * sum_{i in S0} bce_i  +  a1 * sum_{i in S1} bce_i
                   - b0 * sum_{i in S0} r_i(0) - b1 * sum_{i in S1} r_i(1) ]

where S_g = {i : group_i = g}, bce_i is the cross-entropy of the model
probability against the observed label, and r_i(g) is the expected
cross-entropy of the model probability against a label drawn from the
observed group-g label marginal.  The pair (a0, a1) weights the two
groups' sample losses; (b0, b1) set the regularizer intensities.  All
four scalars are meta-learned, which also absorbs the group rescaling
factor a noise-rate-aware objective would otherwise need.

The regularizer realizes the expectation form of the peer term: instead
of subtracting the loss of a randomly sampled (feature, label) peer
pair, each row subtracts its expected loss under its group's label
marginal, which is the exact average over all same-group peer labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import bce_batch


@dataclass(frozen=True)
class MetaParams:
    """Meta-learned scalars: group weights alpha, regularizer intensities beta."""

    alpha: tuple[float, float] = (1.0, 1.0)
    beta: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vals = (*self.alpha, *self.beta)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("meta parameters must be finite")
        if self.alpha[0] < 0 or self.alpha[1] < 0:
            raise ValueError("group weights must be nonnegative")

    def as_vector(self) -> np.ndarray:
        return np.array([*self.alpha, *self.beta], dtype=float)

    @staticmethod
    def from_vector(v: np.ndarray) -> "MetaParams":
        return MetaParams((float(v[0]), float(v[1])), (float(v[2]), float(v[3])))


@dataclass(frozen=True)
class GroupLabelMarginals:
    """Empirical P(Y=+1 | A=a) on the observed training data."""

    p_pos_given_a0: float
    p_pos_given_a1: float

    def __post_init__(self):
        for p in (self.p_pos_given_a0, self.p_pos_given_a1):
            if not 0.0 <= p <= 1.0:
                raise ValueError("marginals must lie in [0,1]")

    def p_pos(self, a: int) -> float:
        return self.p_pos_given_a0 if a == 0 else self.p_pos_given_a1


def estimate_marginals(y: np.ndarray, a: np.ndarray) -> GroupLabelMarginals:
    """Exact empirical label frequencies per group over the full training set."""
    y = np.asarray(y)
    a = np.asarray(a)
    out = []
    for g in (0, 1):
        mask = a == g
        if not mask.any():
            raise ValueError(f"group {g} is empty; cannot estimate its label marginal")
        out.append(float((y[mask] == 1).mean()))
    return GroupLabelMarginals(out[0], out[1])


def expected_group_loss(p: float, marginals: GroupLabelMarginals, a: int) -> float:
    """Expected BCE of probability p against the observed group-a label marginal."""
    q = marginals.p_pos(a)
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability {p} outside (0,1)")
    return -(q * np.log(p) + (1.0 - q) * np.log1p(-p))


def peer_loss(sample_loss: float, peer_term: float, alpha_balance: float) -> float:
    """Sample loss minus alpha_balance times a peer term.

    The peer term may be a sampled pair loss or the expectation form
    (expected_group_loss); the balance scalar compensates unbalanced labels
    and is treated as a tunable hyperparameter.
    """
    return sample_loss - alpha_balance * peer_term


def _group_expected_bce(probs: np.ndarray, a: np.ndarray,
                        marginals: GroupLabelMarginals) -> np.ndarray:
    """Per-row expected BCE against the row's own group label marginal."""
    q = np.where(np.asarray(a) == 0, marginals.p_pos_given_a0, marginals.p_pos_given_a1)
    return -(q * np.log(probs) + (1.0 - q) * np.log1p(-probs))


def bfarl_loss(probs: np.ndarray, y: np.ndarray, a: np.ndarray,
               meta: MetaParams, marginals: GroupLabelMarginals) -> float:
    """Objective value over a batch given per-row probabilities.

    An empty group simply contributes zero to both its sample-loss and
    regularizer sums.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        raise ValueError("batch must be nonempty")
    a = np.asarray(a)
    alpha_row = np.where(a == 0, meta.alpha[0], meta.alpha[1])
    beta_row = np.where(a == 0, meta.beta[0], meta.beta[1])
    sample = bce_batch(probs, y)
    reg = _group_expected_bce(probs, a, marginals)
    return float(np.mean(alpha_row * sample - beta_row * reg))


def loss_fn_from_scalars(a0: float, a1: float, b0: float, b1: float,
                         marginals: GroupLabelMarginals):
    """Per-sample (values, dvalue/dlogit) closure from raw meta scalars.

    For p = sigmoid(t):  d bce(p, y)/dt = p - [y=+1]  and
    d E_q bce(p, Y)/dt = p - q, so each row's derivative is
    alpha_g * (p - y01) - beta_g * (p - q_g).  Raw scalars (rather than a
    validated MetaParams) let finite-difference probes hold a slightly
    negative group weight.
    """

    def loss_fn(probs, logits, y, a):
        a = np.asarray(a)
        y01 = (np.asarray(y) == 1).astype(float)
        q = np.where(a == 0, marginals.p_pos_given_a0, marginals.p_pos_given_a1)
        alpha_row = np.where(a == 0, a0, a1)
        beta_row = np.where(a == 0, b0, b1)
        values = alpha_row * bce_batch(probs, y) - beta_row * _group_expected_bce(probs, a, marginals)
        dlogit = alpha_row * (probs - y01) - beta_row * (probs - q)
        return values, dlogit

    return loss_fn


def make_bfarl_loss_fn(meta: MetaParams, marginals: GroupLabelMarginals):
    """Per-sample (values, dvalue/dlogit) closure for the objective."""
    return loss_fn_from_scalars(*meta.alpha, *meta.beta, marginals)


def bfarl_objective(params, x: np.ndarray, y: np.ndarray, a: np.ndarray,
                    meta: MetaParams, marginals: GroupLabelMarginals) -> float:
    """Objective value of a model on a batch (forward pass included)."""
    from .model import forward_batch
    probs, _, _ = forward_batch(params, x)
    return bfarl_loss(probs, y, a, meta, marginals)


def make_bce_loss_fn():
    """Per-sample (values, dvalue/dlogit) closure for plain mean BCE."""

    def loss_fn(probs, logits, y, a):
        y01 = (np.asarray(y) == 1).astype(float)
        return bce_batch(probs, y), probs - y01

    return loss_fn
