"""Label-bias and selection-bias injection, and the rate conversion between them.

Label bias flips the latent clean label Z into the observed label Y with
group-conditional rates: theta_a_plus is the chance a clean negative in
group a is observed positive, theta_a_minus the chance a clean positive
is observed negative.  Selection bias removes observed-positive rows of
one group so its positive proportion drops from r to r/sigma.

The conversion formulas relate theta (flip rate on the selected data) to
epsilon (the effective combined rate on the original data):

    theta = ((sigma - r) / (1 - r)) * epsilon + (1 - sigma) / (1 - r)
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .data import Dataset


class BiasDomainError(ValueError):
    """Bias parameters outside their admissible region."""


@dataclass(frozen=True)
class BiasSpec:
    """Four flip rates, a selection factor, and the baseline positive proportion."""

    theta_0_plus: float = 0.0
    theta_0_minus: float = 0.0
    theta_1_plus: float = 0.0
    theta_1_minus: float = 0.0
    sigma: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        for name in ("theta_0_plus", "theta_0_minus", "theta_1_plus", "theta_1_minus"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BiasDomainError(f"{name}={v} outside [0,1]")
        if self.theta_0_plus + self.theta_0_minus >= 1.0:
            raise BiasDomainError("group-0 flip rates must sum below 1")
        if self.theta_1_plus + self.theta_1_minus >= 1.0:
            raise BiasDomainError("group-1 flip rates must sum below 1")
        if self.sigma < 1.0:
            raise BiasDomainError(f"sigma={self.sigma} must be >= 1")
        if not 0.0 < self.r < 1.0:
            raise BiasDomainError(f"r={self.r} must lie in (0,1)")

    def theta(self, a: int, sign: int) -> float:
        """Flip rate for group a; sign=+1 selects theta_a_plus, -1 theta_a_minus."""
        if a == 0:
            return self.theta_0_plus if sign == 1 else self.theta_0_minus
        return self.theta_1_plus if sign == 1 else self.theta_1_minus

    def to_dict(self) -> dict:
        return {
            "theta_0_plus": self.theta_0_plus, "theta_0_minus": self.theta_0_minus,
            "theta_1_plus": self.theta_1_plus, "theta_1_minus": self.theta_1_minus,
            "sigma": self.sigma, "r": self.r,
        }


def delta_factor(theta_plus: float, theta_minus: float) -> float:
    """Group rescaling factor 1 / (1 - theta_plus - theta_minus).

    Maps a group's loss on flipped data back to the clean-data scale; only
    the numeric verification oracle needs it explicitly, since the training
    objective absorbs it into the meta-learned group weights.
    """
    s = theta_plus + theta_minus
    if s >= 1.0:
        raise BiasDomainError(f"flip rates sum to {s} >= 1; rescaling factor undefined")
    return 1.0 / (1.0 - s)


def delta_for_group(spec: BiasSpec, a: int) -> float:
    return delta_factor(spec.theta(a, 1), spec.theta(a, -1))


def _check_conversion_args(sigma: float, r: float) -> None:
    if sigma < 1.0:
        raise BiasDomainError(f"sigma={sigma} must be >= 1")
    if not 0.0 < r < 1.0:
        raise BiasDomainError(f"r={r} must lie in (0,1)")


def theta_from_epsilon(epsilon: float, sigma: float, r: float) -> float:
    """Flip rate on the selected data from the combined rate on the original data."""
    _check_conversion_args(sigma, r)
    if not 0.0 <= epsilon <= 1.0:
        raise BiasDomainError(f"epsilon={epsilon} outside [0,1]")
    theta = (sigma - r) / (1.0 - r) * epsilon + (1.0 - sigma) / (1.0 - r)
    if not -1e-12 <= theta <= 1.0 + 1e-12:
        raise BiasDomainError(
            f"theta={theta} outside [0,1]; bias settings (epsilon={epsilon}, "
            f"sigma={sigma}, r={r}) are inconsistent"
        )
    return min(max(theta, 0.0), 1.0)


def epsilon_from_theta(theta: float, sigma: float, r: float) -> float:
    """Inverse of theta_from_epsilon."""
    _check_conversion_args(sigma, r)
    if not 0.0 <= theta <= 1.0:
        raise BiasDomainError(f"theta={theta} outside [0,1]")
    epsilon = ((1.0 - r) * theta + (sigma - 1.0)) / (sigma - r)
    if not -1e-12 <= epsilon <= 1.0 + 1e-12:
        raise BiasDomainError(
            f"epsilon={epsilon} outside [0,1]; bias settings (theta={theta}, "
            f"sigma={sigma}, r={r}) are inconsistent"
        )
    return min(max(epsilon, 0.0), 1.0)


def inject_label_bias(dataset: Dataset, spec: BiasSpec, rng_seed: int) -> Dataset:
    """Flip each clean label independently with its group- and class-conditional rate.

    Features, groups, and the clean labels are untouched; only the observed
    labels change.
    """
    if dataset.z is None:
        raise ValueError("dataset must carry clean labels z for label-bias injection")
    rng = np.random.default_rng(rng_seed)
    # flip probability: clean positives use theta_a_minus, clean negatives theta_a_plus
    p_flip = np.where(
        dataset.z == 1,
        np.where(dataset.a == 0, spec.theta_0_minus, spec.theta_1_minus),
        np.where(dataset.a == 0, spec.theta_0_plus, spec.theta_1_plus),
    )
    flips = rng.random(dataset.n) < p_flip
    y = np.where(flips, -dataset.z, dataset.z)
    return Dataset(dataset.features, y, dataset.a, dataset.z,
                   {**dataset.provenance,
                    "label_bias": spec.to_dict(), "label_bias_seed": int(rng_seed),
                    "n_flipped": int(flips.sum())})


def selection_removal_count(n_group: int, n_positive: int, sigma: float) -> int:
    """Smallest number of positives to remove so the positive proportion is <= r/sigma.

    r is the group's current positive proportion.  Rounds toward keeping
    rows: the resulting proportion is the largest value not exceeding the
    target reachable by integer removal.
    """
    if sigma < 1.0:
        raise BiasDomainError(f"sigma={sigma} must be >= 1")
    if n_positive == 0 or sigma == 1.0:
        return 0
    if n_positive == n_group:
        raise BiasDomainError("group has no negatives; target proportion unreachable")
    target = (n_positive / n_group) / sigma
    # (n_positive - c) / (n_group - c) <= target  <=>  c >= (n_positive - target*n_group) / (1 - target)
    c = max(0, ceil((n_positive - target * n_group) / (1.0 - target)))
    while c > 0 and (n_positive - (c - 1)) <= target * (n_group - (c - 1)):
        c -= 1
    while (n_positive - c) > target * (n_group - c):
        c += 1
    return c


def inject_selection_bias(dataset: Dataset, sigma: float, rng_seed: int,
                          group: int = 0) -> Dataset:
    """Uniformly remove observed-positive rows of the targeted group.

    Removal stops at the largest positive proportion still at or below
    r/sigma; all other rows survive.  The removal count lands in provenance.
    """
    if sigma < 1.0:
        raise BiasDomainError(f"sigma={sigma} must be >= 1")
    in_group = dataset.a == group
    pos_idx = np.flatnonzero(in_group & (dataset.y == 1))
    n_group = int(in_group.sum())
    c = selection_removal_count(n_group, len(pos_idx), sigma) if n_group else 0
    prov_update = {"selection_sigma": float(sigma), "selection_group": int(group),
                   "selection_removed": int(c), "selection_seed": int(rng_seed)}
    if c == 0:
        return Dataset(dataset.features, dataset.y, dataset.a, dataset.z,
                       {**dataset.provenance, **prov_update})
    rng = np.random.default_rng(rng_seed)
    removed = rng.choice(pos_idx, size=c, replace=False)
    keep = np.setdiff1d(np.arange(dataset.n), removed)
    out = dataset.subset(keep)
    return Dataset(out.features, out.y, out.a, out.z,
                   {**dataset.provenance, **prov_update})
