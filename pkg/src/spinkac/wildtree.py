"""Branching-tree and marked-partition representations of the flow.

A random binary tree grows from the root by splitting each leaf at unit
rate; the flow's solution at time t is the expectation, over the tree
alive at t, of the leafwise collision product of the initial density.
Trees are stored as sorted tuples of root paths (tuples of 0/1 bits);
the root is the empty path, and a valid tree is ancestor-closed with
zero or two children per node. Leaves are consumed in lexicographic
path order wherever a list of densities is supplied.

The zero-coupling flow additionally admits a dual description by a
marked partition process: fragments carry a set of sites and an
optional mark, and each fragment independently splits by one of four
equally likely moves per step. The fragment order mirrors the regular
binary tree of the same depth, so depth-u expectations can be compared
against the u-fold square iteration of the product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import marginal_factor, marginal_on_sites
from .errors import CapacityError

MAX_LEAVES = 1 << 20
EMPTY_FRAGMENT = (frozenset(), None)


def sample_tree(t, rng, max_leaves=MAX_LEAVES):
    """Draw the branching tree alive at time t; returns sorted node paths."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    nodes = [()]
    queue = [((), 0.0)]
    leaves = 1
    while queue:
        path, birth = queue.pop()
        split_at = birth + rng.exponential()
        if split_at <= t:
            c0, c1 = path + (0,), path + (1,)
            nodes += [c0, c1]
            queue += [(c0, split_at), (c1, split_at)]
            leaves += 1
            if leaves > max_leaves:
                raise CapacityError(f"tree exceeded {max_leaves} leaves at t = {t}")
    return tuple(sorted(nodes))


def regular_tree(depth):
    """Full binary tree with 2**depth leaves."""
    nodes = [()]
    for d in range(1, depth + 1):
        nodes += [tuple((i >> (d - 1 - j)) & 1 for j in range(d)) for i in range(1 << d)]
    return tuple(sorted(nodes))


def tree_leaves(tree):
    node_set = set(tree)
    return tuple(p for p in tree if p + (0,) not in node_set)


def check_tree(tree):
    node_set = set(tree)
    if () not in node_set:
        raise ValueError("tree must contain the root")
    for p in tree:
        if p and p[:-1] not in node_set:
            raise ValueError(f"node {p} lacks its parent")
        has0 = p + (0,) in node_set
        has1 = p + (1,) in node_set
        if has0 != has1:
            raise ValueError(f"node {p} has exactly one child")
    return tuple(sorted(node_set))


def eval_tree(ctx, tree, densities):
    """Collapse a tree bottom-up with the collision product.

    densities: one density (used at every leaf) or a sequence matching
    the leaf count, consumed in lexicographic leaf order.
    """
    tree = check_tree(tree)
    node_set = set(tree)
    leaves = tree_leaves(tree)
    if isinstance(densities, np.ndarray) and densities.ndim == 1:
        assign = {leaf: densities for leaf in leaves}
    else:
        densities = list(densities)
        if len(densities) != len(leaves):
            raise ValueError(f"tree has {len(leaves)} leaves, got {len(densities)} densities")
        assign = dict(zip(leaves, densities))

    def value(path):
        if path + (0,) in node_set:
            return ctx.product(value(path + (0,)), value(path + (1,)))
        return assign[path]

    return value(())


def discrete_iterate(ctx, p, k):
    """k-fold square iteration: p, p o p, (p o p) o (p o p), ..."""
    q = np.asarray(p, dtype=float)
    for _ in range(k):
        q = ctx.product(q, q)
    return q


@dataclass
class MCSolution:
    mean: np.ndarray
    stderr: np.ndarray
    samples: int
    mean_leaves: float


def mc_solution(ctx, p0, t, samples, rng):
    """Monte Carlo solution of the flow at time t by tree averaging."""
    if samples < 1:
        raise ValueError("need at least one sample")
    size = 1 << ctx.n
    acc = np.zeros(size)
    acc2 = np.zeros(size)
    total_leaves = 0
    for _ in range(samples):
        tree = sample_tree(t, rng)
        val = eval_tree(ctx, tree, np.asarray(p0, dtype=float))
        acc += val
        acc2 += val * val
        total_leaves += len(tree_leaves(tree))
    mean = acc / samples
    var = np.maximum(acc2 / samples - mean * mean, 0.0)
    stderr = np.sqrt(var / samples)
    return MCSolution(mean, stderr, samples, total_leaves / samples)


# -- marked partition process -------------------------------------------


def lazy_kernel(K):
    """One-step site chain slowed to rate 1/n: (1/n) K + (1 - 1/n) I."""
    n = K.shape[0]
    return K / n + (1.0 - 1.0 / n) * np.eye(n)


def _sampler(P):
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0

    def step(x, rng):
        return int(np.searchsorted(cum[x], rng.random(), side="right"))

    return step


def split_fragment(frag, u, b, step_K, step_lazy, rng):
    """Apply one of the four equally likely moves to a fragment.

    b = 1 keeps the fragment left, b = 2 keeps it right. b in {3, 4}
    refreshes: an unmarked set either sheds the drawn site into a fresh
    marked singleton (site in set) or stands pat (site outside); a
    marked singleton moves its mark by the lazy chain. b = 4 applies
    the refresh and then swaps the output pair, including in the
    stand-pat sub-case.
    """
    A, mark = frag
    if b == 1:
        return frag, EMPTY_FRAGMENT
    if b == 2:
        return EMPTY_FRAGMENT, frag
    if mark is None:
        if u in A:
            pair = ((A - {u}, None), (frozenset((u,)), step_K(u, rng)))
        else:
            pair = ((A, None), EMPTY_FRAGMENT)
    else:
        pair = ((A, step_lazy(mark, rng)), EMPTY_FRAGMENT)
    return pair if b == 3 else (pair[1], pair[0])


class PartitionProcess:
    """Fragment dynamics for a given site-transport kernel."""

    def __init__(self, K):
        self.K = np.asarray(K, dtype=float)
        self.n = self.K.shape[0]
        self._step_K = _sampler(self.K)
        self._step_lazy = _sampler(lazy_kernel(self.K))

    def initial(self):
        return [(frozenset(range(self.n)), None)]

    def step(self, fragments, rng, drop_empty=False):
        out = []
        for frag in fragments:
            u = int(rng.integers(self.n))
            b = int(rng.integers(1, 5))
            for child in split_fragment(frag, u, b, self._step_K, self._step_lazy, rng):
                if drop_empty and not child[0] and child[1] is None:
                    continue
                out.append(child)
        return out

    def run(self, depth, rng):
        """Fragments after `depth` steps, in binary-tree order (2**depth)."""
        if depth > 20:
            raise CapacityError("fragment count 2**depth exceeds the gate at depth 20")
        frags = self.initial()
        for _ in range(depth):
            frags = self.step(frags, rng)
        return frags

    def fragmentation_time(self, rng, max_steps=100000):
        """Steps until every surviving fragment is a marked singleton."""
        frags = self.initial()
        steps = 0
        while any(mark is None for _, mark in frags):
            frags = self.step(frags, rng, drop_empty=True)
            steps += 1
            if steps > max_steps:
                raise CapacityError(f"fragmentation exceeded {max_steps} steps")
        return steps


def fragment_factor(p, frag, n):
    """The state-space factor a fragment contributes to the product estimate."""
    A, mark = frag
    if mark is None:
        return marginal_factor(p, tuple(A), n)
    site_marg = marginal_on_sites(p, (mark,), n)
    j = next(iter(A))
    masks = np.arange(1 << n, dtype=np.int64)
    return site_marg[(masks >> j) & 1]


@dataclass
class MPPEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    samples: int


def mpp_expectation(K, densities, depth, runs, rng):
    """Monte Carlo estimate of the depth-u iterated product at zero
    coupling, via the marked-partition representation. `densities` is a
    sequence of 2**depth densities in fragment order (a single density
    is broadcast)."""
    proc = PartitionProcess(K)
    n = proc.n
    size = 1 << n
    want = 1 << depth
    if isinstance(densities, np.ndarray) and densities.ndim == 1:
        densities = [densities] * want
    densities = [np.asarray(p, dtype=float) for p in densities]
    if len(densities) != want:
        raise ValueError(f"need {want} densities for depth {depth}, got {len(densities)}")
    acc = np.zeros(size)
    acc2 = np.zeros(size)
    for _ in range(runs):
        frags = proc.run(depth, rng)
        est = np.ones(size)
        for p, frag in zip(densities, frags):
            if not frag[0] and frag[1] is None:
                continue
            est *= fragment_factor(p, frag, n)
        acc += est
        acc2 += est * est
    mean = acc / runs
    var = np.maximum(acc2 / runs - mean * mean, 0.0)
    return MPPEstimate(mean, np.sqrt(var / runs), runs)


def mpp_representation_check(ctx, densities, depth, runs, rng):
    """Compare the partition-process estimate with the exact iterated
    product. Zero coupling only. Returns (estimate, exact, max_sigmas)."""
    if np.any(ctx.J != 0.0):
        raise ValueError("the partition representation requires zero coupling")
    est = mpp_expectation(ctx.K, densities, depth, runs, rng)
    if isinstance(densities, np.ndarray) and densities.ndim == 1:
        exact = discrete_iterate(ctx, densities, depth)
    else:
        exact = eval_tree(ctx, regular_tree(depth), list(densities))
    sig = np.abs(est.mean - exact) / np.maximum(est.stderr, 1e-15)
    return est, exact, float(np.max(sig))


def fragmentation_tail(K, runs, rng, horizon=None):
    """Empirical tail P(H >= u) of the fragmentation time.

    Returns (u values, tail estimates, stderr) for u = 1..horizon
    (default: past the n e^{-u/2n} crossing of 1/runs)."""
    proc = PartitionProcess(K)
    n = proc.n
    if horizon is None:
        horizon = int(2 * n * math.log(max(runs, 2) * n)) + 1
    times = np.array([proc.fragmentation_time(rng) for _ in range(runs)])
    u = np.arange(1, horizon + 1)
    tail = np.array([(times >= uu).mean() for uu in u])
    stderr = np.sqrt(np.maximum(tail * (1 - tail), 0.0) / runs)
    return u, tail, stderr, times
