"""Pair exchange between two configurations, and the induced bilinear product.

A collision takes an ordered pair (sigma, sigma') and a site pair (l, k):
the proposed outcome copies sigma'[k] into site l of sigma and sigma[l]
into site k of sigma'. The proposal is accepted with the heat-bath
probability built from the *zero-field* quadratic weights of both
configurations, which makes the two-configuration kernel reversible for
any product Gibbs measure whose field is constant on each irreducible
block of the site-transport kernel K.

The site pair is drawn from K(l, k) / n, so the per-configuration jump
rate stays O(1) as n grows.

Three evaluation routes for the product are provided:

* ``reference`` — quadruple loop, kept dumb on purpose; cross-check only.
* ``tensor``    — the full bilinear operator as one (2^n, 4^n) matrix,
                  built once per context; the fast path for n <= 7.
* ``stream``    — per-(l, k) vectorized accumulation, no big tensor;
                  covers the exact gate up to n = 12 at ~O(4^n) memory.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import (
    check_interaction,
    check_partition,
    check_probvec,
    check_sites,
    gibbs,
    block_constant,
)
from .errors import CapacityError

PRODUCT_N_MAX = 12
TENSOR_N_MAX = 7
REFERENCE_N_MAX = 5


def single_site_kernel(n):
    return np.eye(n)


def mean_field_kernel(n):
    return np.full((n, n), 1.0 / n)


def blocks_kernel(n, blocks):
    blocks = check_partition(blocks, n)
    K = np.zeros((n, n))
    for b in blocks:
        idx = np.array(b)
        K[np.ix_(idx, idx)] = 1.0 / len(b)
    return K


def check_transport_kernel(K, n=None):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"transport kernel must be square, got shape {K.shape}")
    if n is not None and K.shape[0] != n:
        raise ValueError(f"transport kernel is {K.shape[0]}x{K.shape[0]}, expected n = {n}")
    if np.min(K) < 0:
        raise ValueError("transport kernel has a negative entry")
    if np.max(np.abs(K - K.T)) > 1e-12:
        raise ValueError("transport kernel must be symmetric")
    rows = np.sum(K, axis=1)
    if np.max(np.abs(rows - 1.0)) > 1e-12:
        raise ValueError(f"transport kernel rows must sum to 1, got {rows}")
    return K


def build_transport_kernel(kind, n, blocks=None, matrix=None):
    n = check_sites(n)
    if kind == "single-site":
        return single_site_kernel(n)
    if kind == "mean-field":
        return mean_field_kernel(n)
    if kind == "blocks":
        if blocks is None:
            raise ValueError("blocks kernel needs a partition")
        return blocks_kernel(n, blocks)
    if kind == "matrix":
        if matrix is None:
            raise ValueError("matrix kernel needs the matrix")
        return check_transport_kernel(matrix, n)
    raise ValueError(f"unknown kernel kind {kind!r}")


def kernel_components(K):
    """Irreducible blocks of the site-transport kernel (union-find on support)."""
    K = check_transport_kernel(K)
    n = K.shape[0]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for l in range(n):
        for k in range(l + 1, n):
            if K[l, k] > 0:
                rl, rk = find(l), find(k)
                if rl != rk:
                    parent[rl] = rk
    groups = {}
    for l in range(n):
        groups.setdefault(find(l), []).append(l)
    return tuple(sorted(tuple(g) for g in groups.values()))


def exchange(sigma, sigma_p, l, k):
    """Swap site l of sigma with site k of sigma' (mask arithmetic)."""
    a = (sigma_p >> k) & 1
    b = (sigma >> l) & 1
    tau = (sigma & ~(1 << l)) | (a << l)
    tau_p = (sigma_p & ~(1 << k)) | (b << k)
    return tau, tau_p


class CollisionContext:
    """Precomputed tables for one (J, K) pair.

    Attributes
    ----------
    n : int
    J, K : float arrays
    blocks : tuple of tuples
        Irreducible blocks of K; fields must be constant on these for
        the product measure to be reversible.
    pairs : list of (l, k, weight) with weight = K[l, k] / n over supp K.
    """

    def __init__(self, J, K):
        self.J = check_interaction(J)
        self.n = check_sites(self.J.shape[0])
        self.K = check_transport_kernel(K, self.n)
        self.blocks = kernel_components(self.K)
        masks = np.arange(1 << self.n, dtype=np.int64)
        self.masks = masks
        s = ((masks[:, None] >> np.arange(self.n)) & 1).astype(np.float64) * 2.0 - 1.0
        self.spins = s
        # cavity field at site l: sum_{j != l} J[l, j] * s_j
        self.fields = s @ self.J - s * np.diag(self.J)
        self.logw = 0.5 * np.einsum("ij,ij->i", s @ self.J, s)
        self.pairs = [
            (l, k, self.K[l, k] / self.n)
            for l in range(self.n)
            for k in range(self.n)
            if self.K[l, k] > 0
        ]
        self._bit = [((masks >> l) & 1).astype(bool) for l in range(self.n)]
        self._tensor = None

    # -- acceptance -------------------------------------------------------

    def acceptance(self, l, k, sigma, sigma_p):
        """Heat-bath acceptance for exchanging site l of sigma with site k
        of sigma'. Equals 1/2 whenever the two spins already agree."""
        a = ((sigma_p >> k) & 1) * 2 - 1
        b = ((sigma >> l) & 1) * 2 - 1
        logit = (a - b) * (self.fields[sigma, l] - self.fields[sigma_p, k])
        return float(expit(logit))

    def acceptance_matrix(self, l, k):
        """P[sigma, sigma'] over the full pair grid, computed in log space."""
        sl = self.spins[:, l]
        sk = self.spins[:, k]
        logit = (sk[None, :] - sl[:, None]) * (
            self.fields[:, l][:, None] - self.fields[:, k][None, :]
        )
        return expit(logit)

    def diagonal_acceptance(self, l, k, sigma):
        """Acceptance for swapping sites l and k inside one configuration."""
        swapped = sigma
        if ((sigma >> l) & 1) != ((sigma >> k) & 1):
            swapped = sigma ^ ((1 << l) | (1 << k))
        return float(expit(self.logw[swapped] - self.logw[sigma]))

    # -- product ----------------------------------------------------------

    def _exchanged_rows(self, l):
        ml = 1 << l
        return self.masks | ml, self.masks & ~ml

    def product(self, p, q, mode="auto", check=True):
        """Symmetrized collision product of two densities.

        mode: 'auto' (tensor for small n, stream otherwise), 'tensor',
        'stream', or 'reference'. check=False skips the probability
        validation so integrator stage vectors (mass 1, possibly with
        roundoff-negative entries) can pass through.
        """
        if check:
            p = check_probvec(p, self.n)
            q = check_probvec(q, self.n)
        else:
            p = np.asarray(p, dtype=float)
            q = np.asarray(q, dtype=float)
        if mode == "auto":
            mode = "tensor" if self.n <= TENSOR_N_MAX else "stream"
        if mode == "reference":
            return self.product_reference(p, q)
        if mode == "tensor":
            if self.n > TENSOR_N_MAX:
                raise CapacityError(f"tensor route gated at n <= {TENSOR_N_MAX}")
            return self._product_tensor(p, q)
        if mode == "stream":
            if self.n > PRODUCT_N_MAX:
                raise CapacityError(f"exact products gated at n <= {PRODUCT_N_MAX}")
            return self._product_stream(p, q)
        raise ValueError(f"unknown product mode {mode!r}")

    def _tensor_matrix(self):
        if self._tensor is None:
            size = 1 << self.n
            B = np.zeros((size, size * size))
            masks = self.masks
            for l, k, w in self.pairs:
                P = self.acceptance_matrix(l, k)
                ml = 1 << l
                bitk = self._bit[k]
                tau = np.where(bitk[None, :], (masks | ml)[:, None], (masks & ~ml)[:, None])
                flat_acc = tau * (size * size) + masks[:, None] * size + masks[None, :]
                np.add.at(B.ravel(), flat_acc.ravel(), (w * P).ravel())
                flat_rej = masks[:, None] * (size * size + size) + masks[None, :]
                np.add.at(B.ravel(), flat_rej.ravel(), (w * (1.0 - P)).ravel())
            self._tensor = B
        return self._tensor

    def _product_tensor(self, p, q):
        W = 0.5 * (np.multiply.outer(p, q) + np.multiply.outer(q, p))
        return self._tensor_matrix() @ W.ravel()

    def _product_stream(self, p, q):
        W = 0.5 * (np.multiply.outer(p, q) + np.multiply.outer(q, p))
        row_mass = W.sum(axis=1)
        out = np.zeros_like(p)
        masks = self.masks
        for l, k, w in self.pairs:
            P = self.acceptance_matrix(l, k)
            A = W * P
            acc_rows = A.sum(axis=1)
            out += w * (row_mass - acc_rows)
            bitk = self._bit[k]
            up = A[:, bitk].sum(axis=1)
            down = acc_rows - up
            ml = 1 << l
            np.add.at(out, masks | ml, w * up)
            np.add.at(out, masks & ~ml, w * down)
        return out

    def product_reference(self, p, q):
        """Plain-loop evaluation of the defining sum. Slow; small n only."""
        if self.n > REFERENCE_N_MAX:
            raise CapacityError(f"reference product gated at n <= {REFERENCE_N_MAX}")
        size = 1 << self.n
        out = np.zeros(size)
        for sigma in range(size):
            for sigma_p in range(size):
                mass = 0.5 * (p[sigma] * q[sigma_p] + p[sigma_p] * q[sigma])
                if mass == 0.0:
                    continue
                for l, k, w in self.pairs:
                    acc = self.acceptance(l, k, sigma, sigma_p)
                    tau, _ = exchange(sigma, sigma_p, l, k)
                    out[tau] += mass * w * acc
                    out[sigma] += mass * w * (1.0 - acc)
        return out

    # -- reversibility ----------------------------------------------------

    def detailed_balance_residual(self, h=None):
        """Max over pair transitions of |forward flow - backward flow| for
        the product measure gibbs(J, h) x gibbs(J, h). The field must be
        constant on every irreducible block of K."""
        mu = gibbs(self.J, h)
        if h is not None and not block_constant(h, self.blocks, self.n):
            raise ValueError(
                "field is not constant on the kernel's irreducible blocks; "
                "reversibility does not apply"
            )
        masks = self.masks
        worst = 0.0
        for l, k, w in self.pairs:
            P = self.acceptance_matrix(l, k)
            flow = np.multiply.outer(mu, mu) * (w * P)
            ml, mk = 1 << l, 1 << k
            bitk = self._bit[k]
            bitl = self._bit[l]
            tau = np.where(bitk[None, :], (masks | ml)[:, None], (masks & ~ml)[:, None])
            tau_p = np.where(bitl[:, None], (masks | mk)[None, :], (masks & ~mk)[None, :])
            worst = max(worst, float(np.max(np.abs(flow - flow[tau, tau_p]))))
        return worst
