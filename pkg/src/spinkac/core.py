"""States, measures and information functionals on the discrete cube.

Conventions used across the package:

* A configuration of ``n`` two-valued sites is an integer bitmask.
  Bit ``l`` (0-based) holds site ``l``; the spin value is ``2*bit - 1``,
  so a set bit means spin ``+1``.
* A probability vector ("density") is a 1-D float64 array of length
  ``2**n`` indexed by mask.
* A site partition is a tuple of disjoint, covering tuples of 0-based
  site indices. Per-block quantities are reported in block order.

Dense enumeration is gated at ``n <= 24`` sites.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, ConvergenceError, DegenerateProfileError

N_MAX = 24

_CHUNK = 1 << 20


def check_sites(n):
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"site count must be a positive integer, got {n!r}")
    if n > N_MAX:
        raise CapacityError(f"n = {n} exceeds the dense-enumeration gate n <= {N_MAX}")
    return int(n)


def spins_matrix(n):
    """Return the (2**n, n) matrix of spin values, int8, S[mask, l] in {-1, +1}."""
    n = check_sites(n)
    masks = np.arange(1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(np.int8) * 2 - 1


def spin_at(mask, site):
    return ((mask >> site) & 1) * 2 - 1


def set_spin(mask, site, value):
    """Return mask with site forced to the given spin value (+1 or -1)."""
    if value == 1:
        return mask | (1 << site)
    if value == -1:
        return mask & ~(1 << site)
    raise ValueError(f"spin value must be +1 or -1, got {value!r}")


def flip_site(mask, site):
    return mask ^ (1 << site)


def check_interaction(J, n=None):
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"interaction matrix must be square, got shape {J.shape}")
    if n is not None and J.shape[0] != n:
        raise ValueError(f"interaction matrix is {J.shape[0]}x{J.shape[0]}, expected n = {n}")
    ij = np.unravel_index(np.argmax(np.abs(J - J.T)), J.shape)
    if abs(J[ij] - J.T[ij]) > 1e-12:
        raise ValueError(
            f"interaction matrix not symmetric at ({ij[0] + 1}, {ij[1] + 1}): "
            f"{J[ij]} vs {J[ij[1], ij[0]]}"
        )
    return J


def interaction_row_norm(J):
    """max_i sum_j |J_ij| (the coupling strength entering all rate bounds)."""
    J = np.asarray(J, dtype=float)
    return float(np.max(np.sum(np.abs(J), axis=1))) if J.size else 0.0


def jacobi_eigvals(a, tol=1e-12, max_sweeps=80):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius mass drops below
    ``tol * (1 + ||a||_F)``. Returns eigenvalues sorted ascending.
    """
    a = np.array(a, dtype=float)
    m = a.shape[0]
    if m == 1:
        return a[0].copy()
    scale = 1.0 + math.sqrt(float(np.sum(a * a)))
    mask = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(a[mask] ** 2)))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) < 1e150:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                else:
                    # theta**2 would overflow; use the asymptotic root
                    t = 1.0 / (2.0 * theta)
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    else:
        raise ConvergenceError("Jacobi iteration did not reach tolerance", residual=off)
    return np.sort(np.diag(a))


def lam_max(J):
    """Largest eigenvalue of the interaction matrix."""
    return float(jacobi_eigvals(check_interaction(J))[-1])


def is_nonneg_definite(J, tol=1e-10):
    return float(jacobi_eigvals(check_interaction(J))[0]) >= -tol


def log_gibbs_weights(J, h=None):
    """Unnormalized log-weights 0.5*<s, J s> + <h, s> for every mask."""
    J = check_interaction(J)
    n = check_sites(J.shape[0])
    if h is None:
        h = np.zeros(n)
    h = np.asarray(h, dtype=float)
    if h.shape != (n,):
        raise ValueError(f"field vector must have length {n}, got shape {h.shape}")
    total = 1 << n
    out = np.empty(total)
    shifts = np.arange(n)
    for start in range(0, total, _CHUNK):
        masks = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        s = ((masks[:, None] >> shifts) & 1).astype(np.float64) * 2.0 - 1.0
        sj = s @ J
        out[start : start + len(masks)] = 0.5 * np.einsum("ij,ij->i", sj, s) + s @ h
    return out


def gibbs(J, h=None):
    """Normalized Gibbs density over all masks (log-domain normalization)."""
    logw = log_gibbs_weights(J, h)
    return np.exp(logw - logsumexp(logw))


def check_probvec(p, n=None, tol=1e-12):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (p.size & (p.size - 1)) != 0:
        raise ValueError(f"density must be a length-2**n vector, got shape {p.shape}")
    if n is not None and p.size != (1 << n):
        raise ValueError(f"density has {p.size} entries, expected {1 << n}")
    if np.min(p) < -tol:
        raise ValueError(f"density has a negative entry: min = {np.min(p)}")
    s = float(np.sum(p))
    if abs(s - 1.0) > tol:
        raise ValueError(f"density mass {s} deviates from 1 beyond {tol}")
    return p


def sites_of(p):
    return int(np.asarray(p).size).bit_length() - 1


def check_partition(blocks, n):
    """Validate a tuple-of-tuples partition of range(n); returns it normalized."""
    seen = set()
    norm = []
    for b in blocks:
        bb = tuple(sorted(int(x) for x in b))
        if not bb:
            raise ValueError("partition contains an empty block")
        for x in bb:
            if x < 0 or x >= n:
                raise ValueError(f"site {x + 1} outside 1..{n}")
            if x in seen:
                raise ValueError(f"site {x + 1} appears in two blocks")
            seen.add(x)
        norm.append(bb)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise ValueError(f"partition misses sites {[x + 1 for x in missing]}")
    return tuple(norm)


def singleton_partition(n):
    return tuple((l,) for l in range(n))


def site_means(p, n=None):
    """E_p[s_l] for every site, as a length-n vector."""
    p = np.asarray(p, dtype=float)
    if n is None:
        n = sites_of(p)
    masks = np.arange(p.size, dtype=np.int64)
    out = np.empty(n)
    for l in range(n):
        bit = ((masks >> l) & 1).astype(np.float64)
        out[l] = float(p @ (2.0 * bit - 1.0))
    return out


def block_sum_matrix(n, blocks):
    """M[mask, b] = sum of spin values of block b's sites, float64."""
    s = spins_matrix(n).astype(np.float64)
    return np.stack([s[:, list(b)].sum(axis=1) for b in blocks], axis=1)


def magnetization_profile(p, blocks, n=None):
    """Per-block averaged site means, in block order."""
    p = np.asarray(p, dtype=float)
    if n is None:
        n = sites_of(p)
    blocks = check_partition(blocks, n)
    means = site_means(p, n)
    return np.array([means[list(b)].mean() for b in blocks])


def check_regular(p, blocks, n=None, tol=0.0):
    """Raise DegenerateProfileError if any block magnetization sits at +-1."""
    if n is None:
        n = sites_of(np.asarray(p))
    blocks = check_partition(blocks, n)
    m = magnetization_profile(p, blocks, n)
    for b, mb in zip(blocks, m):
        if abs(mb) >= 1.0 - tol:
            raise DegenerateProfileError(
                f"block {tuple(x + 1 for x in b)} has magnetization {mb}; "
                "the flow is only defined strictly inside (-1, 1)"
            )
    return m


def relative_entropy(p, q):
    """sum p log(p/q), with 0 log 0 = 0 and +inf when p charges a q-null state."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("densities must share a state space")
    sup = p > 0.0
    if np.any(q[sup] == 0.0):
        return math.inf
    return float(np.sum(p[sup] * np.log(p[sup] / q[sup])))


def tv_distance(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))))


def entropy_functional(mu, F):
    """Ent_mu(F) = mu[F log F] - mu[F] log mu[F] for nonnegative F."""
    mu = np.asarray(mu, dtype=float)
    F = np.asarray(F, dtype=float)
    if np.min(F) < 0:
        raise ValueError("entropy functional needs a nonnegative function")
    pos = (F > 0.0) & (mu > 0.0)
    mean = float(mu @ F)
    if mean <= 0.0:
        return 0.0
    return float(np.sum(mu[pos] * F[pos] * np.log(F[pos]))) - mean * math.log(mean)


def marginal_on_sites(p, sites, n=None):
    """Marginal of p on a sorted site tuple, indexed by packed sub-mask.

    Sub-mask bit i corresponds to sites[i]. The empty tuple yields
    the scalar array [1.0].
    """
    p = np.asarray(p, dtype=float)
    if n is None:
        n = sites_of(p)
    sites = tuple(sorted(sites))
    if not sites:
        return np.array([np.sum(p)])
    masks = np.arange(p.size, dtype=np.int64)
    pat = np.zeros(p.size, dtype=np.int64)
    for i, l in enumerate(sites):
        pat |= ((masks >> l) & 1) << i
    return np.bincount(pat, weights=p, minlength=1 << len(sites))


def marginal_factor(p, sites, n=None):
    """Vector over all full masks whose entry is the p-marginal of the mask's
    restriction to `sites` (1.0 everywhere for the empty tuple)."""
    p = np.asarray(p, dtype=float)
    if n is None:
        n = sites_of(p)
    sites = tuple(sorted(sites))
    if not sites:
        return np.ones(p.size)
    marg = marginal_on_sites(p, sites, n)
    masks = np.arange(p.size, dtype=np.int64)
    pat = np.zeros(p.size, dtype=np.int64)
    for i, l in enumerate(sites):
        pat |= ((masks >> l) & 1) << i
    return marg[pat]


def match_block_means(logw, blocks, target, tol=1e-10, max_iter=200):
    """Find per-block constant fields c so the tilted measure hits target means.

    The tilted measure is ``exp(logw + sum_b c_b * M_b) / Z`` with ``M_b``
    the spin sum of block b. The map c -> log Z is strictly convex with
    gradient the block spin-sum means, so damped Newton (halve the step
    until the max-norm residual of the block magnetizations decreases)
    converges for any strictly interior target.

    Returns (c, tilted_density). Raises DegenerateProfileError for a
    boundary target and ConvergenceError on stagnation.
    """
    logw = np.asarray(logw, dtype=float)
    n = sites_of(logw)
    blocks = check_partition(blocks, n)
    target = np.asarray(target, dtype=float)
    if target.shape != (len(blocks),):
        raise ValueError(f"target must give one mean per block, got shape {target.shape}")
    for b, tb in zip(blocks, target):
        if abs(tb) >= 1.0 - 1e-12:
            raise DegenerateProfileError(
                f"target magnetization {tb} for block {tuple(x + 1 for x in b)} "
                "is on the boundary"
            )
    sizes = np.array([len(b) for b in blocks], dtype=float)
    M = block_sum_matrix(n, blocks)
    c = np.arctanh(target)

    def state(cvec):
        lp = logw + M @ cvec
        lp -= logsumexp(lp)
        p = np.exp(lp)
        m = (p @ M) / sizes
        return p, m, float(np.max(np.abs(m - target)))

    p, m, res = state(c)
    for _ in range(max_iter):
        if res <= tol:
            return c, p
        centered = M - (p @ M)
        hess = (centered * p[:, None]).T @ centered
        grad = sizes * (m - target)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular curvature in field solve", residual=res)
        lam = 1.0
        while True:
            c_try = c - lam * step
            p_try, m_try, res_try = state(c_try)
            if res_try < res:
                c, p, m, res = c_try, p_try, m_try, res_try
                break
            lam *= 0.5
            if lam < 1e-14:
                raise ConvergenceError(
                    f"field solve stagnated at residual {res}", residual=res
                )
    raise ConvergenceError(f"field solve exceeded {max_iter} iterations", residual=res)


def solve_field(J, blocks, target, tol=1e-10):
    """Block-constant external field h with gibbs(J, h) matching the target
    block magnetizations. Returns a length-n field vector."""
    J = check_interaction(J)
    n = J.shape[0]
    blocks = check_partition(blocks, n)
    c, _ = match_block_means(log_gibbs_weights(J), blocks, target, tol=tol)
    h = np.zeros(n)
    for b, cb in zip(blocks, c):
        h[list(b)] = cb
    return h


def block_constant(h, blocks, n=None, tol=1e-12):
    """True when the field vector is constant on every block."""
    h = np.asarray(h, dtype=float)
    if n is None:
        n = h.size
    for b in blocks:
        vals = h[list(b)]
        if np.max(vals) - np.min(vals) > tol:
            return False
    return True
