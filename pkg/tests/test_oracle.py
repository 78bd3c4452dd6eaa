"""Enumeration oracle for the three-term decomposition identity."""

import numpy as np
import pytest

from bfarl.losses import MetaParams
from bfarl.oracle import (DiscreteWorld, WorldError, clean_risk,
                          lhs_expected_bfarl, rhs_decomposition, sample_world,
                          verify_decomposition, weighted_group_risks)


def simple_world(theta_plus=(0.0, 0.0), theta_minus=(0.0, 0.0),
                 p_a=(0.5, 0.5), f=(0.3, 0.8)):
    m = len(f)
    p_x = np.full((2, 2, m), 1.0 / m)
    return DiscreteWorld(np.array(p_a), np.array([0.4, 0.6]), p_x,
                         np.array(f), np.array(theta_plus), np.array(theta_minus))


class TestWorldValidation:
    def test_probability_sums(self):
        with pytest.raises(WorldError):
            DiscreteWorld(np.array([0.6, 0.6]), np.array([0.5, 0.5]),
                          np.full((2, 2, 2), 0.5), np.array([0.2, 0.7]),
                          np.zeros(2), np.zeros(2))

    def test_degenerate_flip_rates(self):
        with pytest.raises(WorldError):
            simple_world(theta_plus=(0.6, 0.0), theta_minus=(0.5, 0.0))

    def test_classifier_probabilities_strict(self):
        with pytest.raises(WorldError):
            simple_world(f=(0.0, 0.5))


class TestLhs:
    def test_noiseless_unregularized_equals_clean_risk(self):
        w = simple_world()
        meta = MetaParams((1.0, 1.0), (0.0, 0.0))
        assert lhs_expected_bfarl(w, meta) == pytest.approx(clean_risk(w), abs=1e-15)

    def test_symmetric_world_group_swap(self):
        w = simple_world(theta_plus=(0.1, 0.1), theta_minus=(0.2, 0.2))
        meta = MetaParams((1.0, 1.0), (0.3, 0.3))
        swapped = DiscreteWorld(w.p_a[::-1].copy(), w.p_z,
                                w.p_x_given_za[:, ::-1, :].copy(), w.f,
                                w.theta_plus[::-1].copy(), w.theta_minus[::-1].copy())
        assert lhs_expected_bfarl(w, meta) == pytest.approx(
            lhs_expected_bfarl(swapped, meta), abs=1e-14)

    def test_four_point_world_matches_rhs(self):
        rng = np.random.default_rng(0)
        p_x = np.stack([[rng.dirichlet(np.ones(4)) for _ in range(2)] for _ in range(2)])
        w = DiscreteWorld(np.array([0.45, 0.55]), np.array([0.5, 0.5]), p_x,
                          np.array([0.2, 0.4, 0.6, 0.85]),
                          np.array([0.2, 0.1]), np.array([0.1, 0.3]))
        meta = MetaParams((1.0, 1.0), (0.3, 0.2))
        risks = weighted_group_risks(w)
        lam = 0.17
        s = lam if risks[0] >= risks[1] else -lam
        rho_a, rho_b = 0.3 + s, 0.2 - s
        ok, res = verify_decomposition(w, meta, rho_a, rho_b, tol=1e-8)
        assert ok, res


class TestRhs:
    def test_zero_rho_zero_theta_is_clean_risk(self):
        w = simple_world()
        meta = MetaParams((1.0, 1.0), (0.0, 0.0))
        assert rhs_decomposition(w, meta, 0.0, 0.0) == pytest.approx(
            clean_risk(w), abs=1e-15)

    def test_fairness_term_zero_for_equal_group_risks(self):
        # mirrored groups: identical conditionals, rates, and shares
        w = simple_world(theta_plus=(0.15, 0.15), theta_minus=(0.05, 0.05))
        risks = weighted_group_risks(w)
        assert risks[0] == pytest.approx(risks[1], abs=1e-15)
        meta = MetaParams((1.0, 1.0), (0.4, 0.4))
        # lambda = 0.3 contributes nothing when the gap is zero
        with_reg = rhs_decomposition(w, meta, 0.4 + 0.3, 0.4 - 0.3)
        without = rhs_decomposition(w, meta, 0.4, 0.4)
        assert with_reg == pytest.approx(without, abs=1e-15)

    def test_inconsistent_rho_rejected(self):
        w = simple_world()
        meta = MetaParams((1.0, 1.0), (0.3, 0.2))
        with pytest.raises(WorldError):
            rhs_decomposition(w, meta, 0.5, 0.9)

    def test_single_group_world_rejected(self):
        w = simple_world(p_a=(1.0, 0.0))
        meta = MetaParams((1.0, 1.0), (0.1, 0.1))
        with pytest.raises(WorldError):
            rhs_decomposition(w, meta, 0.1, 0.1)
        with pytest.raises(WorldError):
            lhs_expected_bfarl(w, meta)


class TestVerify:
    def test_hundred_random_worlds(self):
        rng = np.random.default_rng(2024)
        for i in range(100):
            loss = "bce" if i % 2 == 0 else "zero_one"
            world, meta, rho_a, rho_b = sample_world(rng, loss=loss)
            ok, res = verify_decomposition(world, meta, rho_a, rho_b,
                                           tol=1e-8, loss=loss)
            assert ok, (i, loss, res)

    def test_perturbed_u_breaks_identity(self):
        rng = np.random.default_rng(5)
        world, meta, rho_a, rho_b = sample_world(rng)
        lhs = lhs_expected_bfarl(world, meta)
        rhs = rhs_decomposition(world, meta, rho_a, rho_b, u_perturb=1e-3)
        assert abs(lhs - rhs) > 1e-4

    def test_bias_term_vanishes_at_zero_theta_zero_gamma(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            world, _, _, _ = sample_world(rng)
            quiet = DiscreteWorld(world.p_a, world.p_z, world.p_x_given_za,
                                  world.f, np.zeros(2), np.zeros(2))
            # gamma = (0, 0) forces beta = (-s, s); pick s sign-matched
            risks = weighted_group_risks(quiet)
            s = 0.25 if risks[0] >= risks[1] else -0.25
            meta = MetaParams((1.0, 1.0), (-s, s))
            base = rhs_decomposition(quiet, meta, 0.0, 0.0)
            fairness = abs(s) * abs(risks[0] - risks[1])
            assert base == pytest.approx(clean_risk(quiet) + fairness, abs=1e-12)
            ok, res = verify_decomposition(quiet, meta, 0.0, 0.0, tol=1e-8)
            assert ok, res

    def test_permutation_of_feature_points(self):
        rng = np.random.default_rng(13)
        world, meta, rho_a, rho_b = sample_world(rng)
        perm = rng.permutation(world.n_points)
        permuted = DiscreteWorld(world.p_a, world.p_z,
                                 world.p_x_given_za[:, :, perm].copy(),
                                 world.f[perm].copy(),
                                 world.theta_plus, world.theta_minus)
        assert lhs_expected_bfarl(world, meta) == pytest.approx(
            lhs_expected_bfarl(permuted, meta), abs=1e-14)
        assert rhs_decomposition(world, meta, rho_a, rho_b) == pytest.approx(
            rhs_decomposition(permuted, meta, rho_a, rho_b), abs=1e-14)
