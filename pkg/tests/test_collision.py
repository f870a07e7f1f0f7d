"""Exchange moves, acceptance probabilities and the collision product."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinkac import collision, core
from spinkac.collision import CollisionContext
from spinkac.errors import CapacityError


def random_symmetric(rng, n, scale):
    a = rng.standard_normal((n, n))
    return scale * (a + a.T)


def random_density(rng, n):
    return rng.dirichlet(np.full(1 << n, 1.5))


class TestKernels:
    def test_single_site_is_identity(self):
        K = collision.single_site_kernel(3)
        assert np.array_equal(K, np.eye(3))
        assert collision.kernel_components(K) == ((0,), (1,), (2,))

    def test_mean_field_is_flat(self):
        K = collision.mean_field_kernel(4)
        assert np.abs(K - 0.25).max() == 0.0
        assert collision.kernel_components(K) == ((0, 1, 2, 3),)

    def test_blocks_kernel_shape(self):
        K = collision.blocks_kernel(3, ((0, 1), (2,)))
        want = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        assert np.array_equal(K, want)
        assert collision.kernel_components(K) == ((0, 1), (2,))

    def test_rows_are_stochastic(self):
        for K in (collision.single_site_kernel(5), collision.mean_field_kernel(5),
                  collision.blocks_kernel(5, ((0, 2, 4), (1, 3)))):
            assert np.abs(K.sum(axis=1) - 1.0).max() < 1e-14

    def test_explicit_kernel_validation(self):
        with pytest.raises(ValueError):
            collision.build_transport_kernel("matrix", 2, matrix=np.array([[0.5, 0.5], [0.9, 0.1]]))
        with pytest.raises(ValueError):
            collision.build_transport_kernel("matrix", 2, matrix=np.array([[0.5, 0.6], [0.6, 0.5]]))
        with pytest.raises(ValueError):
            collision.build_transport_kernel("no-such-kind", 2)


class TestExchange:
    def test_identity_when_spins_agree(self):
        # copying an equal spin changes neither configuration
        assert collision.exchange(0b101, 0b100, 2, 2) == (0b101, 0b100)

    def test_hand_case(self):
        # sigma = (+,-), sigma' = (-,-), swap site 1 of sigma with site 2 of sigma'
        tau, tau_p = collision.exchange(0b01, 0b00, 0, 1)
        assert (tau, tau_p) == (0b00, 0b10)  # (-,-) and (-,+)

    @given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 3), st.integers(0, 3))
    @settings(max_examples=100)
    def test_involution(self, sigma, sigma_p, l, k):
        tau, tau_p = collision.exchange(sigma, sigma_p, l, k)
        assert collision.exchange(tau, tau_p, l, k) == (sigma, sigma_p)


class TestAcceptance:
    def test_free_case_is_half(self):
        ctx = CollisionContext(np.zeros((2, 2)), collision.mean_field_kernel(2))
        for sigma in range(4):
            for sigma_p in range(4):
                assert ctx.acceptance(0, 1, sigma, sigma_p) == pytest.approx(0.5)

    def test_unchanged_pair_is_half(self):
        rng = np.random.default_rng(21)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.3), collision.mean_field_kernel(3))
        # sigma' carries the same spin at k as sigma at l, so nothing moves
        assert ctx.acceptance(0, 2, 0b001, 0b100) == pytest.approx(0.5)

    def test_complement_identity(self):
        rng = np.random.default_rng(22)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.3), collision.mean_field_kernel(3))
        for sigma in range(8):
            for sigma_p in range(8):
                for l in range(3):
                    for k in range(3):
                        tau, tau_p = collision.exchange(sigma, sigma_p, l, k)
                        if (tau, tau_p) == (sigma, sigma_p):
                            continue
                        back = ctx.acceptance(l, k, tau, tau_p)
                        assert ctx.acceptance(l, k, sigma, sigma_p) + back == pytest.approx(1.0)

    def test_exhaustive_heat_bath_bounds(self):
        rng = np.random.default_rng(23)
        J = random_symmetric(rng, 3, 0.2)
        ctx = CollisionContext(J, collision.mean_field_kernel(3))
        jb = core.interaction_row_norm(J)
        lo = 1.0 / (1.0 + math.exp(4.0 * jb))
        for l in range(3):
            for k in range(3):
                P = ctx.acceptance_matrix(l, k)
                assert P.min() >= lo - 1e-12
                assert P.max() <= 1.0 - lo + 1e-12

    def test_diagonal_acceptance(self):
        ctx0 = CollisionContext(np.zeros((2, 2)), collision.mean_field_kernel(2))
        assert ctx0.diagonal_acceptance(0, 1, 0b01) == pytest.approx(0.5)
        J = np.array([[0.0, 0.4], [0.4, 0.0]])
        ctx = CollisionContext(J, collision.mean_field_kernel(2))
        # equal spins swap to themselves
        assert ctx.diagonal_acceptance(0, 1, 0b11) == pytest.approx(0.5)
        # 0b01 and 0b10 have equal zero-field weight, so the swap is fair too
        assert ctx.diagonal_acceptance(0, 1, 0b01) == pytest.approx(0.5)
        h_ctx = CollisionContext(np.array([[0.3, 0.0], [0.0, 0.0]]), collision.mean_field_kernel(2))
        # weight ratio of the swapped configuration, as a logistic
        want = 1.0 / (1.0 + math.exp(h_ctx.logw[0b01] - h_ctx.logw[0b10]))
        assert h_ctx.diagonal_acceptance(0, 1, 0b01) == pytest.approx(want)


class TestProduct:
    def test_modes_agree(self):
        rng = np.random.default_rng(24)
        for n in (2, 3, 4):
            ctx = CollisionContext(random_symmetric(rng, n, 0.2),
                                   collision.blocks_kernel(n, (tuple(range(n)),)))
            p, q = random_density(rng, n), random_density(rng, n)
            ref = ctx.product_reference(p, q)
            assert np.abs(ctx.product(p, q, mode="tensor") - ref).max() < 1e-13
            assert np.abs(ctx.product(p, q, mode="stream") - ref).max() < 1e-13

    def test_commutative(self):
        rng = np.random.default_rng(25)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.25), collision.mean_field_kernel(3))
        p, q = random_density(rng, 3), random_density(rng, 3)
        assert np.array_equal(ctx.product(p, q), ctx.product(q, p))

    def test_gibbs_is_stationary(self):
        rng = np.random.default_rng(26)
        for trial in range(4):
            n = 2 + trial % 2
            J = random_symmetric(rng, n, 0.2)
            blocks = (tuple(range(n)),) if trial % 2 else tuple((l,) for l in range(n))
            K = collision.blocks_kernel(n, blocks)
            h = np.zeros(n)
            for b in blocks:
                h[list(b)] = rng.uniform(-0.5, 0.5)
            mu = core.gibbs(J, h)
            ctx = CollisionContext(J, K)
            assert np.abs(ctx.product(mu, mu) - mu).max() < 1e-12

    def test_free_single_site_closed_form(self):
        # zero coupling, independent sites: the product keeps each input with
        # weight 1/4 and mixes the site marginals for the rest
        rng = np.random.default_rng(27)

        def pair_product(a, b):
            return np.array([a[(m >> 0) & 1] * b[(m >> 1) & 1] for m in range(4)])

        a, b, c, d = (rng.dirichlet([2, 2]) for _ in range(4))
        p, q = pair_product(a, b), pair_product(c, d)
        ctx = CollisionContext(np.zeros((2, 2)), collision.single_site_kernel(2))
        want = 0.25 * p + 0.25 * q + 0.25 * (pair_product(a, d) + pair_product(c, b))
        assert np.abs(ctx.product(p, q) - want).max() < 1e-14

    def test_magnetization_halving(self):
        rng = np.random.default_rng(28)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.2),
                               collision.blocks_kernel(3, ((0, 1), (2,))))
        p, q = random_density(rng, 3), random_density(rng, 3)
        m = core.magnetization_profile(ctx.product(p, q), ctx.blocks)
        half = 0.5 * (core.magnetization_profile(p, ctx.blocks) + core.magnetization_profile(q, ctx.blocks))
        assert np.abs(m - half).max() < 1e-12

    def test_tensor_gate(self):
        ctx = CollisionContext(np.zeros((8, 8)), collision.mean_field_kernel(8))
        p = np.full(256, 1.0 / 256)
        with pytest.raises(CapacityError):
            ctx.product(p, p, mode="tensor")


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_product_preserves_densities(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    ctx = CollisionContext(random_symmetric(rng, n, 0.2), collision.mean_field_kernel(n))
    out = ctx.product(random_density(rng, n), random_density(rng, n))
    assert abs(out.sum() - 1.0) < 1e-12
    assert out.min() >= -1e-15


class TestDetailedBalance:
    def test_zero_field(self):
        rng = np.random.default_rng(29)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.3), collision.mean_field_kernel(3))
        assert ctx.detailed_balance_residual() < 1e-12

    def test_block_constant_field(self):
        rng = np.random.default_rng(30)
        ctx = CollisionContext(random_symmetric(rng, 3, 0.3),
                               collision.blocks_kernel(3, ((0, 1), (2,))))
        assert ctx.detailed_balance_residual(np.array([0.4, 0.4, -0.7])) < 1e-12

    def test_inadmissible_field_flagged(self):
        ctx = CollisionContext(np.zeros((2, 2)), collision.mean_field_kernel(2))
        with pytest.raises(ValueError, match="not constant"):
            ctx.detailed_balance_residual(np.array([0.1, 0.2]))
