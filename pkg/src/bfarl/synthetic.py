"""Synthetic tabular data with linearly separable clean labels and optional bias.

Rows are sparse binary feature vectors; a random Gaussian weight vector
defines the clean label as the sign of its inner product with the
features.  An optional flip stage biases the observed label on rows
whose clean label (in {0,1} encoding) coincides with the group id,
which yields group- and class-dependent label bias: group-0 negatives
flip upward, group-1 positives flip downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator knobs.

    a_rate is the Bernoulli rate of the group-1 sensitive attribute; rarity
    is the exponent making later feature columns progressively rarer
    (column j fires with probability (1/(j+1))**rarity); flip_amount is the
    label-bias probability applied where the flip condition holds.
    """

    n: int = 2000
    k: int = 15
    a_rate: float = 0.1
    rarity: float = 0.5
    flip_amount: float = 0.5
    w_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be positive")
        if not 0.0 <= self.a_rate <= 1.0 or not 0.0 <= self.flip_amount <= 1.0:
            raise ValueError("a_rate and flip_amount must lie in [0,1]")
        if self.rarity < 0.0 or self.w_sigma <= 0.0:
            raise ValueError("rarity must be >= 0 and w_sigma > 0")


def generate(config: SyntheticConfig) -> Dataset:
    """Draw a dataset carrying both clean labels z and observed labels y.

    The last feature column is a constant-1 intercept so a bias-free linear
    layer can realize the generating weight vector; columns 0..k-2 are the
    Bernoulli features.  Clean labels are z = sign(w . x) with ties to -1,
    so the data is exactly linearly separable by the stored weight vector.
    """
    rng = np.random.default_rng(config.seed)
    w_gen = rng.normal(0.0, np.sqrt(config.w_sigma), size=config.k)
    a = (rng.random(config.n) < config.a_rate).astype(int)
    x = np.ones((config.n, config.k))
    for j in range(config.k - 1):
        rate = (1.0 / (j + 1)) ** config.rarity
        x[:, j] = rng.random(config.n) < rate
    margin = x @ w_gen
    z = np.where(margin > 0, 1, -1)
    z01 = (z == 1).astype(int)
    eligible = z01 == a
    flips = eligible & (rng.random(config.n) < config.flip_amount)
    y = np.where(flips, -z, z)
    return Dataset(x, y, a, z, {
        "source": "synthetic",
        "seed": int(config.seed),
        "w_gen": w_gen.tolist(),
        "n_flipped": int(flips.sum()),
    })
