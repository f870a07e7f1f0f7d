"""Branching trees, tree evaluation and the marked-partition sampler."""

import math

import numpy as np
import pytest

from spinkac import collision, dynamics, wildtree
from spinkac.collision import CollisionContext
from spinkac.rng import make_rng


def free_ctx(n, kind="mean-field"):
    return CollisionContext(np.zeros((n, n)), collision.build_transport_kernel(kind, n))


def random_density(rng, n):
    return rng.dirichlet(np.full(1 << n, 2.0))


class TestTrees:
    def test_zero_time_is_root_only(self):
        tree = wildtree.sample_tree(0.0, make_rng(51, 0))
        assert tree == ((),)
        assert wildtree.tree_leaves(tree) == ((),)

    def test_growth_statistics(self):
        # leaf count grows like e^t; the root survives with chance e^{-t}
        rng = make_rng(51, 1)
        runs = 100000
        leaves = np.empty(runs)
        unsplit = 0
        for i in range(runs):
            tree = wildtree.sample_tree(1.0, rng)
            leaves[i] = len(wildtree.tree_leaves(tree))
            unsplit += tree == ((),)
        se = leaves.std() / math.sqrt(runs)
        assert abs(leaves.mean() - math.e) <= 3 * se
        frac = unsplit / runs
        se_u = math.sqrt(frac * (1 - frac) / runs)
        assert abs(frac - math.exp(-1.0)) <= 3 * se_u

    def test_malformed_trees_rejected(self):
        with pytest.raises(ValueError, match="root"):
            wildtree.check_tree(((0,), (1,)))
        with pytest.raises(ValueError, match="one child"):
            wildtree.check_tree(((), (0,)))
        with pytest.raises(ValueError, match="parent"):
            wildtree.check_tree(((), (0,), (1,), (0, 0), (0, 1), (1, 1, 0)))

    def test_regular_tree_shape(self):
        tree = wildtree.regular_tree(2)
        assert len(wildtree.tree_leaves(tree)) == 4
        assert len(tree) == 7


class TestEvalTree:
    def test_single_node_returns_input(self):
        ctx = free_ctx(2)
        p = random_density(make_rng(52, 0), 2)
        assert np.array_equal(wildtree.eval_tree(ctx, ((),), p), p)

    def test_depth_one_is_the_product(self):
        ctx = free_ctx(2)
        rng = make_rng(52, 1)
        p, q = random_density(rng, 2), random_density(rng, 2)
        got = wildtree.eval_tree(ctx, ((), (0,), (1,)), [p, q])
        assert np.abs(got - ctx.product(p, q)).max() < 1e-15

    def test_comb_tree_associates_leftward(self):
        # four leaves hanging off one spine evaluate as ((a o b) o c) o d
        ctx = free_ctx(2)
        rng = make_rng(52, 2)
        a, b, c, d = (random_density(rng, 2) for _ in range(4))
        comb = ((), (0,), (1,), (0, 0), (0, 1), (0, 0, 0), (0, 0, 1))
        got = wildtree.eval_tree(ctx, comb, [a, b, c, d])
        want = ctx.product(ctx.product(ctx.product(a, b), c), d)
        assert np.abs(got - want).max() < 1e-15

    def test_leaf_count_mismatch(self):
        ctx = free_ctx(2)
        p = random_density(make_rng(52, 3), 2)
        with pytest.raises(ValueError, match="leaves"):
            wildtree.eval_tree(ctx, ((), (0,), (1,)), [p])

    def test_discrete_iterate(self):
        ctx = CollisionContext(np.full((2, 2), 0.1), collision.mean_field_kernel(2))
        rng = make_rng(52, 4)
        p = random_density(rng, 2)
        assert np.array_equal(wildtree.discrete_iterate(ctx, p, 0), p)
        via_tree = wildtree.eval_tree(ctx, wildtree.regular_tree(2), p)
        assert np.abs(wildtree.discrete_iterate(ctx, p, 2) - via_tree).max() < 1e-14
        from spinkac.core import magnetization_profile
        m0 = magnetization_profile(p, ctx.blocks)
        m2 = magnetization_profile(wildtree.discrete_iterate(ctx, p, 2), ctx.blocks)
        assert np.abs(m2 - m0).max() < 1e-12


class TestMCSolution:
    def test_zero_time_is_exact(self):
        ctx = free_ctx(2)
        p0 = random_density(make_rng(53, 0), 2)
        sol = wildtree.mc_solution(ctx, p0, 0.0, 50, make_rng(53, 1))
        assert np.abs(sol.mean - p0).max() < 1e-15
        # identical samples: only one-pass variance cancellation noise remains
        assert sol.stderr.max() < 1e-7
        assert sol.mean_leaves == 1.0

    def test_stationary_input(self):
        from spinkac.core import gibbs
        J = np.array([[0.0, 0.2], [0.2, 0.0]])
        ctx = CollisionContext(J, collision.mean_field_kernel(2))
        mu = gibbs(J, np.array([0.15, 0.15]))
        sol = wildtree.mc_solution(ctx, mu, 1.5, 200, make_rng(53, 2))
        sig = np.abs(sol.mean - mu) / np.maximum(sol.stderr, 1e-15)
        assert sig.max() <= 3.0

    def test_against_integrated_flow(self):
        J = np.array([[0.0, 0.15], [0.15, 0.0]])
        ctx = CollisionContext(J, collision.mean_field_kernel(2))
        p0 = random_density(make_rng(53, 3), 2)
        sol = wildtree.mc_solution(ctx, p0, 1.0, 10000, make_rng(53, 4))
        exact = dynamics.evolve(ctx, p0, 1.0, 0.001).final
        sig = np.abs(sol.mean - exact) / np.maximum(sol.stderr, 1e-15)
        assert sig.max() <= 3.0
        assert sol.samples == 10000


class TestFragments:
    def test_empty_fragment_splits_to_empties(self):
        proc = wildtree.PartitionProcess(collision.mean_field_kernel(3))
        rng = make_rng(54, 0)
        for b in (1, 2, 3, 4):
            pair = wildtree.split_fragment(
                wildtree.EMPTY_FRAGMENT, 1, b, proc._step_K, proc._step_lazy, rng)
            assert pair == (wildtree.EMPTY_FRAGMENT, wildtree.EMPTY_FRAGMENT)

    def test_refresh_sheds_a_marked_singleton(self):
        # identity site chain: the shed site keeps its own mark
        proc = wildtree.PartitionProcess(collision.single_site_kernel(3))
        rng = make_rng(54, 1)
        whole = (frozenset({0, 1, 2}), None)
        left, right = wildtree.split_fragment(whole, 1, 3, proc._step_K, proc._step_lazy, rng)
        assert left == (frozenset({0, 2}), None)
        assert right == (frozenset({1}), 1)

    def test_refresh_outside_the_set_stands_pat(self):
        proc = wildtree.PartitionProcess(collision.single_site_kernel(3))
        rng = make_rng(54, 2)
        frag = (frozenset({0, 2}), None)
        assert wildtree.split_fragment(frag, 1, 3, proc._step_K, proc._step_lazy, rng) == (
            frag, wildtree.EMPTY_FRAGMENT)

    def test_marked_singleton_moves_lazily(self):
        proc = wildtree.PartitionProcess(collision.single_site_kernel(3))
        rng = make_rng(54, 3)
        frag = (frozenset({2}), 2)
        left, right = wildtree.split_fragment(frag, 0, 3, proc._step_K, proc._step_lazy, rng)
        assert left == frag  # the identity chain cannot move the mark
        assert right == wildtree.EMPTY_FRAGMENT

    def test_move_four_swaps_the_pair(self):
        proc = wildtree.PartitionProcess(collision.single_site_kernel(3))
        rng = make_rng(54, 4)
        whole = (frozenset({0, 1, 2}), None)
        left, right = wildtree.split_fragment(whole, 1, 4, proc._step_K, proc._step_lazy, rng)
        assert left == (frozenset({1}), 1)
        assert right == (frozenset({0, 2}), None)

    def test_keep_moves(self):
        proc = wildtree.PartitionProcess(collision.mean_field_kernel(2))
        rng = make_rng(54, 5)
        frag = (frozenset({0, 1}), None)
        assert wildtree.split_fragment(frag, 0, 1, proc._step_K, proc._step_lazy, rng) == (
            frag, wildtree.EMPTY_FRAGMENT)
        assert wildtree.split_fragment(frag, 0, 2, proc._step_K, proc._step_lazy, rng) == (
            wildtree.EMPTY_FRAGMENT, frag)


class TestFragmentation:
    def test_single_site_time_is_geometric(self):
        # one site: each step converts the unmarked set with chance 1/2,
        # so P(H >= u) = 2^{1-u} exactly
        proc = wildtree.PartitionProcess(np.eye(1))
        rng = make_rng(55, 0)
        times = np.array([proc.fragmentation_time(rng) for _ in range(20000)])
        for u in (1, 2, 3, 4, 5, 6):
            tail = (times >= u).mean()
            want = 2.0 ** (1 - u)
            se = math.sqrt(max(want * (1 - want), 1e-12) / times.size)
            assert abs(tail - want) <= 3 * se + 1e-12
        # the exponential envelope only clears the exact tail from u = 4 on
        for u in (4, 5, 6, 8):
            assert 2.0 ** (1 - u) <= math.exp(-u / 2.0)

    def test_tail_envelope_at_four_sites(self):
        u, tail, se, _ = wildtree.fragmentation_tail(
            collision.mean_field_kernel(4), 4000, make_rng(55, 1))
        excess = tail - (4.0 * np.exp(-u / 8.0) + 3.0 * se)
        assert excess.max() <= 0.0

    def test_mean_grows_superlinearly(self):
        means = {}
        for n in (2, 4, 8):
            proc = wildtree.PartitionProcess(collision.mean_field_kernel(n))
            rng = make_rng(55, n)
            means[n] = np.mean([proc.fragmentation_time(rng) for _ in range(2000)])
        assert means[2] < means[4] < means[8]
        assert means[4] > 2.0 * means[2]
        assert means[8] > 2.0 * means[4]
        for n, m in means.items():
            assert 1.0 < m / (n * math.log(n)) < 8.0


class TestRepresentation:
    def test_depth_zero_is_exact(self):
        ctx = free_ctx(2)
        p = random_density(make_rng(56, 0), 2)
        est, exact, sig = wildtree.mpp_representation_check(ctx, p, 0, 20, make_rng(56, 1))
        assert np.abs(est.mean - p).max() < 1e-15
        assert np.array_equal(exact, p)
        assert sig <= 3.0

    def test_depth_one_single_site(self):
        ctx = free_ctx(2, "single-site")
        p = random_density(make_rng(56, 2), 2)
        est, exact, sig = wildtree.mpp_representation_check(ctx, p, 1, 20000, make_rng(56, 3))
        assert np.abs(exact - ctx.product(p, p)).max() < 1e-14
        assert sig <= 3.0

    def test_depth_three_mean_field(self):
        ctx = free_ctx(3)
        p = random_density(make_rng(56, 4), 3)
        est, exact, sig = wildtree.mpp_representation_check(ctx, p, 3, 15000, make_rng(56, 5))
        assert sig <= 3.0
        assert est.samples == 15000

    def test_coupling_must_vanish(self):
        ctx = CollisionContext(np.full((2, 2), 0.1), collision.mean_field_kernel(2))
        p = np.full(4, 0.25)
        with pytest.raises(ValueError, match="zero coupling"):
            wildtree.mpp_representation_check(ctx, p, 1, 10, make_rng(56, 6))
