"""Exact enumeration oracle for the objective's three-term decomposition.

Over a finite world of (x, z, a) outcomes with a label-flip channel, the
expected value of the group-rescaled sample loss plus the beta-weighted
group regularizers equals

    clean risk
  + lambda * |weighted group risk 0 - weighted group risk 1|
  + sum_a P(A=a) sum_l sum_k P(Z=l) E_{x|l,a} (U_lk - gamma_a P(Y=k|A=a)) loss(f(x), k)

where U_lk(a) = delta_a * theta_a^{sign(k)}, lambda = |beta_0 - rho_a| =
|rho_b - beta_1|, gamma = (rho_a, rho_b), and the weighted group risk is
P(A=a) times the expected loss of a group-a feature against an
independent draw from the group's observed-label marginal (the exact
population counterpart of the per-sample regularizer).

rho_a and rho_b are free: any pair satisfying rho_a - beta_0 =
beta_1 - rho_b makes the signed identity exact; the absolute-value form
additionally needs the sign of that common difference to match the sign
of the group-risk gap, which is how sample_world chooses them.

Everything is computed by exhaustive enumeration, so both 0-1 loss and
cross-entropy are supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bias import delta_factor
from .losses import MetaParams


class WorldError(ValueError):
    """The discrete world cannot support the requested computation."""


# class index order: 0 -> label -1, 1 -> label +1
_CLASSES = (-1, 1)


@dataclass(frozen=True, eq=False)
class DiscreteWorld:
    """Finite joint distribution over (x, z, a) plus a classifier table.

    The joint factorizes as P(a) * P(z) * P(x | z, a); the clean label must
    be independent of the group for the decomposition's bookkeeping to be
    exact.  theta_plus[a] / theta_minus[a] are the flip rates of the
    observation channel; f[x] is the classifier's positive-class
    probability at feature point x.
    """

    p_a: np.ndarray            # (2,)
    p_z: np.ndarray            # (2,) indexed by class order (-1, +1)
    p_x_given_za: np.ndarray   # (2, 2, m) indexed [z_class, a, x]
    f: np.ndarray              # (m,)
    theta_plus: np.ndarray     # (2,)
    theta_minus: np.ndarray    # (2,)

    def __post_init__(self):
        for name in ("p_a", "p_z", "p_x_given_za", "f", "theta_plus", "theta_minus"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.p_a.shape != (2,) or self.p_z.shape != (2,):
            raise WorldError("p_a and p_z must each have two entries")
        m = self.f.shape[0]
        if self.p_x_given_za.shape != (2, 2, m):
            raise WorldError("p_x_given_za must be (2 classes, 2 groups, m points)")
        for arr, name in ((self.p_a, "p_a"), (self.p_z, "p_z")):
            if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
                raise WorldError(f"{name} must be a probability vector")
        if np.any(self.p_x_given_za < 0) or np.any(
                np.abs(self.p_x_given_za.sum(axis=2) - 1.0) > 1e-9):
            raise WorldError("each p(x | z, a) slice must sum to 1")
        if np.any(self.f <= 0.0) or np.any(self.f >= 1.0):
            raise WorldError("classifier probabilities must lie strictly inside (0,1)")
        for a in (0, 1):
            for v in (self.theta_plus[a], self.theta_minus[a]):
                if not 0.0 <= v <= 1.0:
                    raise WorldError("flip rates must lie in [0,1]")
            if self.theta_plus[a] + self.theta_minus[a] >= 1.0:
                raise WorldError(f"group-{a} flip rates must sum below 1")

    @property
    def n_points(self) -> int:
        return self.f.shape[0]


def _require_both_groups(world: DiscreteWorld) -> None:
    if world.p_a[0] <= 0.0 or world.p_a[1] <= 0.0:
        raise WorldError("both groups need positive probability; "
                         "group-conditional terms are undefined otherwise")


def _loss_table(world: DiscreteWorld, loss: str) -> np.ndarray:
    """(m, 2) table of loss(f[x], class) for class order (-1, +1)."""
    f = world.f
    if loss == "bce":
        return np.column_stack([-np.log1p(-f), -np.log(f)])
    if loss == "zero_one":
        pred = np.where(f >= 0.5, 1, -1)
        return np.column_stack([(pred != -1).astype(float), (pred != 1).astype(float)])
    raise ValueError(f"unknown loss {loss!r}; use 'bce' or 'zero_one'")


def _flip_channel(world: DiscreteWorld) -> np.ndarray:
    """(2, 2, 2) table P(Y = class k | Z = class l, A = a) indexed [l, a, k]."""
    chan = np.empty((2, 2, 2))
    for a in (0, 1):
        # clean -1: flips to +1 with theta_plus
        chan[0, a, 1] = world.theta_plus[a]
        chan[0, a, 0] = 1.0 - world.theta_plus[a]
        # clean +1: flips to -1 with theta_minus
        chan[1, a, 0] = world.theta_minus[a]
        chan[1, a, 1] = 1.0 - world.theta_minus[a]
    return chan


def observed_label_marginals(world: DiscreteWorld) -> np.ndarray:
    """(2, 2) table P(Y = class k | A = a) indexed [a, k]."""
    chan = _flip_channel(world)
    out = np.empty((2, 2))
    for a in (0, 1):
        for k in (0, 1):
            out[a, k] = world.p_z @ chan[:, a, k]
    return out


def weighted_group_risks(world: DiscreteWorld, loss: str = "bce") -> np.ndarray:
    """P(A=a) * E_{x|a} E_{Y|A=a} loss(f(x), Y) for a = 0, 1."""
    _require_both_groups(world)
    table = _loss_table(world, loss)
    q = observed_label_marginals(world)
    out = np.empty(2)
    for a in (0, 1):
        p_x = world.p_z @ world.p_x_given_za[:, a, :]   # P(x | A=a)
        out[a] = world.p_a[a] * p_x @ (table @ q[a])
    return out


def lhs_expected_bfarl(world: DiscreteWorld, meta: MetaParams, loss: str = "bce") -> float:
    """Exact expectation of the rescaled sample loss plus beta regularizers.

    The sample-loss part carries the explicit rescaling factor
    delta_a = 1 / (1 - theta_a^+ - theta_a^-); group weights are not
    involved here, since the identity under test concerns the
    delta-weighted form.
    """
    _require_both_groups(world)
    table = _loss_table(world, loss)
    chan = _flip_channel(world)
    delta = np.array([delta_factor(world.theta_plus[a], world.theta_minus[a]) for a in (0, 1)])
    term1 = 0.0
    for a in (0, 1):
        for li in (0, 1):
            p_x = world.p_x_given_za[li, a, :]
            expected_loss = p_x @ (table @ chan[li, a, :])
            term1 += world.p_a[a] * world.p_z[li] * delta[a] * expected_loss
    risks = weighted_group_risks(world, loss)
    term2 = -(meta.beta[0] * risks[0] + meta.beta[1] * risks[1])
    return float(term1 + term2)


def clean_risk(world: DiscreteWorld, loss: str = "bce") -> float:
    """Expected loss against the clean labels."""
    table = _loss_table(world, loss)
    total = 0.0
    for a in (0, 1):
        for li in (0, 1):
            total += world.p_a[a] * world.p_z[li] * (world.p_x_given_za[li, a, :] @ table[:, li])
    return float(total)


def rhs_decomposition(world: DiscreteWorld, meta: MetaParams, rho_a: float,
                      rho_b: float, loss: str = "bce", u_perturb: float = 0.0) -> float:
    """Clean risk + fairness regularization + bias regularization.

    Raises when (rho_a, rho_b) break the consistency condition
    |beta_0 - rho_a| = |rho_b - beta_1|.  u_perturb offsets every U_lk
    entry and exists only for sensitivity diagnostics.
    """
    _require_both_groups(world)
    lam0 = abs(meta.beta[0] - rho_a)
    lam1 = abs(rho_b - meta.beta[1])
    if abs(lam0 - lam1) > 1e-9 * max(1.0, lam0, lam1):
        raise WorldError(
            f"inconsistent decomposition parameters: |beta0 - rho_a|={lam0} "
            f"!= |rho_b - beta1|={lam1}")
    lam = lam0
    gamma = (rho_a, rho_b)

    table = _loss_table(world, loss)
    q = observed_label_marginals(world)
    delta = np.array([delta_factor(world.theta_plus[a], world.theta_minus[a]) for a in (0, 1)])

    risks = weighted_group_risks(world, loss)
    fairness = lam * abs(risks[0] - risks[1])

    bias_reg = 0.0
    for a in (0, 1):
        # U_lk depends only on the observed class k: delta_a * theta_a^{sign(k)}
        u_row = np.array([delta[a] * world.theta_minus[a], delta[a] * world.theta_plus[a]])
        for li in (0, 1):
            p_x = world.p_x_given_za[li, a, :]
            coeff = (u_row + u_perturb) - gamma[a] * q[a]
            bias_reg += world.p_a[a] * world.p_z[li] * (p_x @ (table @ coeff))
    return float(clean_risk(world, loss) + fairness + bias_reg)


def verify_decomposition(world: DiscreteWorld, meta: MetaParams, rho_a: float,
                         rho_b: float, tol: float = 1e-8,
                         loss: str = "bce") -> tuple[bool, float]:
    """Residual |lhs - rhs| and whether it clears the tolerance."""
    residual = abs(lhs_expected_bfarl(world, meta, loss)
                   - rhs_decomposition(world, meta, rho_a, rho_b, loss))
    return residual <= tol, float(residual)


def sample_world(rng: np.random.Generator, max_points: int = 6,
                 loss: str = "bce") -> tuple[DiscreteWorld, MetaParams, float, float]:
    """Random valid world plus consistent decomposition parameters.

    The common difference rho_a - beta_0 = beta_1 - rho_b is given the sign
    of the world's group-risk gap so the absolute-value fairness term
    matches the signed algebra exactly.
    """
    m = int(rng.integers(2, max_points + 1))
    p_a = rng.dirichlet((3.0, 3.0))
    while p_a.min() < 0.05:
        p_a = rng.dirichlet((3.0, 3.0))
    p_z = rng.dirichlet((3.0, 3.0))
    while p_z.min() < 0.05:
        p_z = rng.dirichlet((3.0, 3.0))
    p_x = np.stack([[rng.dirichlet(np.ones(m)) for _ in (0, 1)] for _ in (0, 1)])
    f = rng.uniform(0.05, 0.95, size=m)
    theta_plus = rng.uniform(0.0, 0.45, size=2)
    theta_minus = rng.uniform(0.0, 0.45, size=2)
    world = DiscreteWorld(p_a, p_z, p_x, f, theta_plus, theta_minus)

    beta = rng.uniform(-1.0, 1.0, size=2)
    meta = MetaParams((1.0, 1.0), (float(beta[0]), float(beta[1])))
    lam = float(rng.uniform(0.0, 1.0))
    risks = weighted_group_risks(world, loss)
    s = lam if risks[0] >= risks[1] else -lam
    rho_a = float(meta.beta[0] + s)
    rho_b = float(meta.beta[1] - s)
    return world, meta, rho_a, rho_b
