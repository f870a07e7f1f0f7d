"""States, Gibbs measures and information functionals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinkac import core
from spinkac.errors import CapacityError, ConvergenceError, DegenerateProfileError


def random_density(rng, n):
    return rng.dirichlet(np.full(1 << n, 1.5))


class TestMasks:
    def test_spins_matrix_values(self):
        s = core.spins_matrix(2)
        assert s.tolist() == [[-1, -1], [1, -1], [-1, 1], [1, 1]]

    def test_spin_accessors_roundtrip(self):
        mask = 0b0110
        assert core.spin_at(mask, 0) == -1
        assert core.spin_at(mask, 1) == 1
        assert core.set_spin(mask, 0, 1) == 0b0111
        assert core.set_spin(mask, 1, -1) == 0b0100
        assert core.flip_site(core.flip_site(mask, 3), 3) == mask

    def test_set_spin_rejects_bad_value(self):
        with pytest.raises(ValueError):
            core.set_spin(0, 0, 0)

    def test_site_gate(self):
        with pytest.raises(CapacityError):
            core.check_sites(25)


class TestGibbs:
    def test_single_free_spin_is_fair(self):
        assert core.gibbs(np.zeros((1, 1))).tolist() == [0.5, 0.5]

    def test_zero_field_flip_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 4))
        p = core.gibbs(0.2 * (a + a.T))
        flipped = p[::-1]  # complementing the mask reverses the index order
        assert np.abs(p - flipped).max() < 1e-15

    def test_two_site_ferromagnet_value(self):
        p = core.gibbs(np.array([[0.0, 0.3], [0.3, 0.0]]))
        want = math.exp(0.3) / (2 * math.exp(0.3) + 2 * math.exp(-0.3))
        assert p[0b11] == pytest.approx(want, abs=1e-15)

    def test_normalized_and_positive(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 3))
        p = core.gibbs(0.3 * (a + a.T), rng.standard_normal(3))
        assert abs(p.sum() - 1.0) < 1e-12
        assert p.min() > 0.0

    def test_asymmetric_interaction_rejected(self):
        with pytest.raises(ValueError):
            core.gibbs(np.array([[0.0, 0.1], [0.2, 0.0]]))


class TestSpectrum:
    def test_jacobi_matches_lapack(self):
        rng = np.random.default_rng(5)
        for m in (2, 3, 5, 8):
            a = rng.standard_normal((m, m))
            a = a + a.T
            got = core.jacobi_eigvals(a)
            want = np.linalg.eigvalsh(a)
            assert np.abs(got - want).max() < 1e-10

    def test_row_norm(self):
        J = np.array([[0.1, -0.2], [-0.2, 0.0]])
        assert core.interaction_row_norm(J) == pytest.approx(0.3)


class TestProfiles:
    def test_uniform_is_unmagnetized(self):
        p = np.full(8, 1.0 / 8)
        m = core.magnetization_profile(p, ((0, 1), (2,)))
        assert np.abs(m).max() < 1e-15

    def test_all_plus_point_mass(self):
        p = np.zeros(8)
        p[7] = 1.0
        m = core.magnetization_profile(p, ((0, 2), (1,)))
        assert m.tolist() == [1.0, 1.0]

    def test_bernoulli_product_means(self):
        # independent sites with P(+1) = alpha_l have mean 2 alpha - 1
        alphas = np.array([0.3, 0.8, 0.6])
        p = np.ones(8)
        for mask in range(8):
            for l in range(3):
                a = alphas[l]
                p[mask] *= a if (mask >> l) & 1 else 1.0 - a
        m = core.magnetization_profile(p, ((0, 1), (2,)))
        want = [np.mean(2 * alphas[:2] - 1), 2 * alphas[2] - 1]
        assert np.abs(m - want).max() < 1e-12

    def test_profile_is_affine(self):
        rng = np.random.default_rng(6)
        p, q = random_density(rng, 3), random_density(rng, 3)
        blocks = ((0, 2), (1,))
        for a in (0.0, 0.25, 0.7, 1.0):
            mix = core.magnetization_profile(a * p + (1 - a) * q, blocks)
            sep = a * core.magnetization_profile(p, blocks) + (1 - a) * core.magnetization_profile(q, blocks)
            assert np.abs(mix - sep).max() < 1e-12

    def test_partition_validation(self):
        with pytest.raises(ValueError):
            core.check_partition(((0, 1), (1, 2)), 3)
        with pytest.raises(ValueError):
            core.check_partition(((0,),), 2)
        with pytest.raises(ValueError):
            core.check_partition(((0,), ()), 1)

    def test_degenerate_profile_names_block(self):
        p = np.zeros(4)
        p[0b11] = 1.0
        with pytest.raises(DegenerateProfileError, match=r"\(1, 2\)"):
            core.check_regular(p, ((0, 1),))


class TestFieldSolve:
    def test_free_spins_solved_by_atanh(self):
        target = np.array([0.4, -0.2])
        h = core.solve_field(np.zeros((3, 3)), ((0, 1), (2,)), target)
        want = np.array([math.atanh(0.4)] * 2 + [math.atanh(-0.2)])
        assert np.abs(h - want).max() < 1e-10

    def test_symmetric_model_zero_target_gives_zero_field(self):
        J = np.array([[0.0, 0.2, 0.1], [0.2, 0.0, 0.2], [0.1, 0.2, 0.0]])
        h = core.solve_field(J, ((0, 1, 2),), np.array([0.0]))
        assert np.abs(h).max() < 1e-10

    def test_random_roundtrip(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            a = rng.standard_normal((3, 3))
            J = 0.15 * (a + a.T)
            blocks = ((0, 1, 2),) if trial % 2 else ((0,), (1, 2))
            target = rng.uniform(-0.6, 0.6, size=len(blocks))
            h = core.solve_field(J, blocks, target)
            m = core.magnetization_profile(core.gibbs(J, h), blocks)
            assert np.abs(m - target).max() < 1e-8
            assert core.block_constant(h, blocks)

    def test_boundary_target_rejected(self):
        with pytest.raises(DegenerateProfileError):
            core.solve_field(np.zeros((2, 2)), ((0, 1),), np.array([1.0]))


class TestEntropy:
    def test_equal_densities(self):
        p = np.array([0.2, 0.3, 0.1, 0.4])
        assert core.relative_entropy(p, p) == 0.0

    def test_support_violation_is_infinite(self):
        assert core.relative_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == math.inf

    def test_point_mass_against_uniform(self):
        val = core.relative_entropy(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        assert val == pytest.approx(math.log(2.0), abs=1e-15)

    def test_tv_extremes(self):
        p = np.array([0.5, 0.5, 0.0, 0.0])
        q = np.array([0.0, 0.0, 0.25, 0.75])
        assert core.tv_distance(p, p) == 0.0
        assert core.tv_distance(p, q) == pytest.approx(1.0)

    def test_entropy_functional_matches_relative_entropy(self):
        # Ent_mu(f) = H(f mu | mu) when mu[f] = 1
        rng = np.random.default_rng(9)
        mu = random_density(rng, 3)
        f = np.exp(rng.standard_normal(8))
        f /= mu @ f
        assert core.entropy_functional(mu, f) == pytest.approx(core.relative_entropy(f * mu, mu), abs=1e-13)

    def test_constant_function_has_zero_entropy(self):
        mu = np.full(4, 0.25)
        assert core.entropy_functional(mu, np.full(4, 3.0)) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_pinsker_inequality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    p, q = random_density(rng, n), random_density(rng, n)
    h = core.relative_entropy(p, q)
    assert h >= 2.0 * core.tv_distance(p, q) ** 2 - 1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_marginals_are_densities(seed):
    rng = np.random.default_rng(seed)
    p = random_density(rng, 3)
    for sites in ((0,), (1, 2), (0, 1, 2), ()):
        marg = core.marginal_on_sites(p, sites)
        assert marg.size == 1 << len(sites)
        assert abs(marg.sum() - 1.0) < 1e-12
        assert marg.min() >= 0.0


def test_marginal_of_product_factorizes():
    rng = np.random.default_rng(11)
    a, b = rng.dirichlet([2, 2]), rng.dirichlet([2, 2])
    p = np.array([a[(m >> 0) & 1] * b[(m >> 1) & 1] for m in range(4)])
    assert np.abs(core.marginal_on_sites(p, (0,)) - a).max() < 1e-14
    assert np.abs(core.marginal_on_sites(p, (1,)) - b).max() < 1e-14
