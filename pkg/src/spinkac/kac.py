"""N interacting configurations exchanging spins through pair collisions.

Each ordered pair of configuration slots (including a slot with itself)
carries an exponential clock of rate 1/N; on a ring, a site pair (l, k)
is drawn as l uniform and k from the transport row K(l, .), and the
heat-bath exchange of the two spins is attempted. The process preserves
the total spin of every irreducible block of K summed across all slots,
so it lives on a count shell. The stationary law on a shell is the
conditioned product of single-configuration Gibbs weights.

Exact routes are gated by total bit count: generator matrices and their
exponentials at N*n <= 12, shell enumeration and Dirichlet-form sums at
N*n <= 22. Count-shell masses for large N go through a log-domain
convolution over the block-count lattice instead of enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit, logsumexp

from .core import (
    check_interaction,
    check_partition,
    check_probvec,
    check_sites,
    entropy_functional,
    interaction_row_norm,
    jacobi_eigvals,
    log_gibbs_weights,
    relative_entropy,
)
from .dynamics import AlphaBound, alpha_bound
from .errors import CapacityError, FitError

EXPONENTIAL_GATE = 12
ENUMERATION_GATE = 22


def mean_field_alpha_bound(J, h=None):
    """Rate bound for the all-pairs (uniform transport) walk with fields:
    (1/4) (1 - 2 lam) exp(-8 (Jbar + hbar))."""
    J = check_interaction(J)
    eigs = jacobi_eigvals(J) if J.shape[0] > 1 else np.array([float(J[0, 0])])
    lam = float(eigs[-1])
    jb = interaction_row_norm(J)
    hb = 0.0 if h is None else float(np.max(np.abs(h)))
    if eigs[0] < -1e-10:
        return AlphaBound(None, False, f"J has negative eigenvalue {eigs[0]}", lam, jb)
    if lam >= 0.5:
        return AlphaBound(None, False, f"largest eigenvalue {lam} >= 1/2", lam, jb)
    return AlphaBound(0.25 * (1.0 - 2.0 * lam) * math.exp(-8.0 * (jb + hb)), True, "", lam, jb)


# -- count shells -------------------------------------------------------


def block_count_table(n, blocks):
    """per-mask vector of +1 counts in each block, shape (2**n, nblocks)."""
    masks = np.arange(1 << n, dtype=np.int64)
    cols = []
    for b in blocks:
        bm = 0
        for l in b:
            bm |= 1 << l
        cols.append(np.bitwise_count((masks & bm).astype(np.uint64)).astype(np.int64))
    return np.stack(cols, axis=1)


def canonical_counts(nu, blocks, N):
    """Shell counts T_b = floor(N |b| (1 + m_b) / 2) for the product of N
    copies of nu (the canonical shell of that density)."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    counts = block_count_table(n, blocks)
    T = []
    for bi, b in enumerate(blocks):
        mean_plus = float(nu @ counts[:, bi])  # E[#plus] in the block, one copy
        m = 2.0 * mean_plus / len(b) - 1.0
        T.append(int(math.floor(N * len(b) * (1.0 + m) / 2.0 + 1e-9)))
    return tuple(T)


def admissible_counts(N, blocks):
    """All shell count tuples with a nonempty shell."""
    ranges = [range(N * len(b) + 1) for b in blocks]
    out = [()]
    for r in ranges:
        out = [t + (x,) for t in out for x in r]
    return out


def canonical_density(nu, blocks, N):
    """Per-block plus-spin fractions floor(N|b|(1+m)/2)/(N|b|), as exact
    fractions so admissibility is an integer statement."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    T = canonical_counts(nu, blocks, N)
    return tuple(Fraction(t, N * len(b)) for t, b in zip(T, blocks))


def density_to_counts(rho, N, blocks):
    """Convert per-block fractions to integer shell counts, demanding
    that N|b|rho_b is an integer."""
    T = []
    for r, b in zip(rho, blocks):
        x = Fraction(r).limit_denominator(10 ** 9) * N * len(b)
        if x.denominator != 1 or not (0 <= x.numerator <= N * len(b)):
            raise ValueError(f"density {r} is not admissible at N = {N}, block size {len(b)}")
        T.append(int(x))
    return tuple(T)


@dataclass
class ParticleMeasure:
    """A conditioned product measure on a count shell, fully enumerated."""

    n: int
    N: int
    blocks: tuple
    T: tuple
    codes: np.ndarray    # sorted combined codes, slot i at bits [i*n, (i+1)*n)
    probs: np.ndarray
    logw: np.ndarray     # unnormalized product log-weights on the shell
    single_logw: list    # per-slot log-weight tables (length N)

    def index_of(self, codes):
        idx = np.searchsorted(self.codes, codes)
        if np.any(self.codes[np.clip(idx, 0, len(self.codes) - 1)] != codes):
            raise KeyError("code outside the shell")
        return idx

    def relative_entropy_to(self, other_probs):
        return relative_entropy(other_probs, self.probs)


def restricted_product_measure(single_log_weights, N, blocks, T):
    """Enumerate the count shell of a product of N single-slot weight
    tables and normalize. `single_log_weights` is one table (shared) or
    a length-N list."""
    if isinstance(single_log_weights, np.ndarray) and single_log_weights.ndim == 1:
        tables = [np.asarray(single_log_weights, dtype=float)] * N
    else:
        tables = [np.asarray(w, dtype=float) for w in single_log_weights]
        if len(tables) != N:
            raise ValueError(f"need {N} weight tables, got {len(tables)}")
    n = int(tables[0].size).bit_length() - 1
    if N * n > ENUMERATION_GATE:
        raise CapacityError(f"shell enumeration gated at N*n <= {ENUMERATION_GATE}")
    blocks = check_partition(blocks, n)
    T = tuple(int(t) for t in T)
    if len(T) != len(blocks):
        raise ValueError("one count per block required")
    for t, b in zip(T, blocks):
        if not 0 <= t <= N * len(b):
            raise ValueError(f"count {t} impossible for block size {len(b)} with N = {N}")
    counts = block_count_table(n, blocks)
    codes = np.arange(1 << (N * n), dtype=np.int64)
    sub_mask = (1 << n) - 1
    total = np.zeros((codes.size, len(blocks)), dtype=np.int64)
    logw = np.zeros(codes.size)
    for i in range(N):
        sub = (codes >> (i * n)) & sub_mask
        total += counts[sub]
        logw += tables[i][sub]
    keep = np.all(total == np.array(T), axis=1)
    codes = codes[keep]
    if codes.size == 0:
        raise ValueError(f"empty shell for counts {T}")
    logw = logw[keep]
    probs = np.exp(logw - logsumexp(logw))
    return ParticleMeasure(n, N, blocks, T, codes, probs, logw, tables)


def multicanonical_measure(J, h, N, blocks, T):
    """Conditioned product of Gibbs measures: h may be None, one field
    vector shared by all slots, or a per-slot list."""
    J = check_interaction(J)
    n = J.shape[0]
    if h is None or (isinstance(h, np.ndarray) and h.ndim == 1):
        tables = log_gibbs_weights(J, h)
    else:
        tables = [log_gibbs_weights(J, np.asarray(hi, dtype=float)) for hi in h]
    return restricted_product_measure(tables, N, blocks, T)


# -- exchange moves on a shell -----------------------------------------


def _pair_moves(measure, kernel):
    """Yield (dst_index, rate_weight, pair_weight) arrays per (i,j,l,k).

    rate r is the heat-bath probability from the measure's own product
    weights; pair_weight is K[l,k] (or 1 for the unweighted variant).
    Identity moves are skipped (their gradient terms vanish).
    """
    n, N = measure.n, measure.N
    codes = measure.codes
    for i in range(N):
        for j in range(N):
            for l in range(n):
                for k in range(n):
                    w = 1.0 if kernel is None else float(kernel[l, k])
                    if w == 0.0:
                        continue
                    pos1 = i * n + l
                    pos2 = j * n + k
                    if pos1 == pos2:
                        continue
                    b1 = (codes >> pos1) & 1
                    b2 = (codes >> pos2) & 1
                    differ = (b1 ^ b2).astype(bool)
                    if not np.any(differ):
                        continue
                    flip = (1 << pos1) | (1 << pos2)
                    new_codes = codes[differ] ^ flip
                    # an exchange that exits the shell targets a zero-mass
                    # state, so its heat-bath rate is zero: drop it
                    dst = np.searchsorted(codes, new_codes)
                    ok = codes[np.clip(dst, 0, codes.size - 1)] == new_codes
                    if not np.any(ok):
                        continue
                    src_mask = np.zeros(codes.size, dtype=bool)
                    src_mask[np.flatnonzero(differ)[ok]] = True
                    dst = dst[ok]
                    r = expit(measure.logw[dst] - measure.logw[src_mask])
                    yield src_mask, dst, r, w


def dirichlet_form(measure, F, G, kernel=None):
    """(1/2Nn) sum over slot pairs and site pairs of mu[K r dF dG]
    (kernel given) or mu[r dF dG] (kernel None, the all-pairs variant)."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    total = 0.0
    for src_mask, dst, r, w in _pair_moves(measure, kernel):
        dF = F[dst] - F[src_mask]
        dG = G[dst] - G[src_mask]
        total += w * float(np.sum(measure.probs[src_mask] * r * dF * dG))
    return total / (2.0 * measure.N * measure.n)


@dataclass
class TransitionTable:
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray  # mu(src) * rate * K / (2 N n), ready for gradient sums
    generator_rate: np.ndarray  # rate * K / (N n) for the jump src -> dst

    def dirichlet(self, F, G):
        return float(np.sum(self.weight * (F[self.dst] - F[self.src]) * (G[self.dst] - G[self.src])))


def transition_table(measure, kernel):
    srcs, dsts, ws, gens = [], [], [], []
    all_idx = np.arange(measure.codes.size)
    for src_mask, dst, r, w in _pair_moves(measure, kernel):
        src = all_idx[src_mask]
        srcs.append(src)
        dsts.append(dst)
        ws.append(w * measure.probs[src] * r / (2.0 * measure.N * measure.n))
        gens.append(w * r / (measure.N * measure.n))
    if not srcs:
        z = np.zeros(0)
        return TransitionTable(z.astype(int), z.astype(int), z, z)
    return TransitionTable(
        np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ws), np.concatenate(gens)
    )


def generator_matrix(measure, kernel):
    """Dense generator of the shell process (exact route)."""
    if measure.N * measure.n > EXPONENTIAL_GATE:
        raise CapacityError(f"generator matrices gated at N*n <= {EXPONENTIAL_GATE}")
    size = measure.codes.size
    L = np.zeros((size, size))
    tab = transition_table(measure, kernel)
    np.add.at(L, (tab.src, tab.dst), tab.generator_rate)
    np.add.at(L, (tab.src, tab.src), -tab.generator_rate)
    return L


def particle_entropy_decay(measure, kernel, nu0, t_grid):
    """Exact H(nu_t | mu) along the shell semigroup, by symmetrized
    eigendecomposition of the generator."""
    L = generator_matrix(measure, kernel)
    mu = measure.probs
    sq = np.sqrt(mu)
    S = (L * sq[:, None] / sq[None, :] + (L * sq[:, None] / sq[None, :]).T) / 2.0
    evals, Q = np.linalg.eigh(S)
    nu0 = np.asarray(nu0, dtype=float)
    out = []
    for t in t_grid:
        prop = (Q * np.exp(t * evals)) @ Q.T
        nu_t = ((nu0 / sq) @ prop) * sq
        nu_t = np.maximum(nu_t, 0.0)
        nu_t /= nu_t.sum()
        out.append(relative_entropy(nu_t, mu))
    return np.array(out)


@dataclass
class ParticleScan:
    min_ratio: float
    median_ratio: float
    samples: int
    discarded: int


def particle_mlsi_scan(measure, kernel, trials, rng):
    """Minimum of Dirichlet(F, log F) / Ent(F) over random positive F."""
    size = measure.codes.size
    if size == 1:
        # a one-point shell has no nonconstant F; the infimum is vacuous
        return ParticleScan(math.inf, math.inf, 0, 0)
    tab = transition_table(measure, kernel)
    ratios = []
    discarded = 0
    for trial in range(trials):
        kind = trial % 3
        if kind == 0:
            s = float(rng.choice([0.5, 1.0, 2.0]))
            F = np.exp(s * rng.standard_normal(size))
        elif kind == 1:
            F = np.full(size, 1e-4)
            F[int(rng.integers(size))] = 1.0
        else:
            F = 1.0 + 0.9 * rng.uniform(-1.0, 1.0, size=size)
        ent = entropy_functional(measure.probs, F)
        if ent < 1e-13:
            discarded += 1
            continue
        ratios.append(tab.dirichlet(F, np.log(F)) / ent)
    if not ratios:
        raise FitError("no usable test functions")
    ratios = np.array(ratios)
    return ParticleScan(float(ratios.min()), float(np.median(ratios)), len(ratios), discarded)


# -- event-driven simulation -------------------------------------------


def initial_state_for_counts(n, blocks, N, T, rng=None):
    """A state on the shell: fill each block's plus spins slot by slot."""
    blocks = check_partition(blocks, n)
    state = np.zeros(N, dtype=np.int64)
    for b, t in zip(blocks, T):
        slots = [(i, l) for i in range(N) for l in b]
        if not 0 <= t <= len(slots):
            raise ValueError(f"count {t} impossible for block {b} with N = {N}")
        if rng is not None:
            order = rng.permutation(len(slots))
            slots = [slots[x] for x in order]
        for i, l in slots[:t]:
            state[i] |= 1 << l
    return state


@dataclass
class ParticleRun:
    final_state: np.ndarray
    events: int
    accepted: int
    occupation: dict | None  # combined code -> occupied time


def simulate_particles(ctx, N, T, t_end, rng, init=None, record_occupation=False):
    """Event-driven exchange among N slots carrying ctx's (J, K).

    Every ordered slot pair has rate 1/N, so events arrive at rate N
    total; each event draws slots (i, j) uniformly, site l uniformly,
    site k from K(l, .), and accepts the spin exchange with the
    heat-bath probability. Site pairs always stay inside one
    irreducible block of K, which conserves the shell counts; this is
    asserted per event.
    """
    n = ctx.n
    block_of = np.empty(n, dtype=int)
    for bi, b in enumerate(ctx.blocks):
        for l in b:
            block_of[l] = bi
    state = initial_state_for_counts(n, ctx.blocks, N, T) if init is None else np.array(init)
    cum_rows = np.cumsum(ctx.K, axis=1)
    cum_rows[:, -1] = 1.0
    occupation = {} if record_occupation else None
    if record_occupation and N * n > ENUMERATION_GATE:
        raise CapacityError("occupation recording needs N*n within the enumeration gate")

    def code():
        c = 0
        for i in range(N):
            c |= int(state[i]) << (i * n)
        return c

    t = 0.0
    events = 0
    accepted = 0
    while True:
        wait = rng.exponential(1.0 / N)
        if t + wait > t_end:
            if record_occupation:
                occupation[code()] = occupation.get(code(), 0.0) + (t_end - t)
            break
        if record_occupation:
            occupation[code()] = occupation.get(code(), 0.0) + wait
        t += wait
        events += 1
        i = int(rng.integers(N))
        j = int(rng.integers(N))
        l = int(rng.integers(n))
        k = int(np.searchsorted(cum_rows[l], rng.random(), side="right"))
        assert block_of[l] == block_of[k], "transport kernel left its block"
        si, sj = int(state[i]), int(state[j])
        if i == j:
            acc = ctx.diagonal_acceptance(l, k, si)
            if rng.random() < acc:
                accepted += 1
                if ((si >> l) & 1) != ((si >> k) & 1):
                    state[i] = si ^ ((1 << l) | (1 << k))
        else:
            acc = ctx.acceptance(l, k, si, sj)
            if rng.random() < acc:
                accepted += 1
                bl = (si >> l) & 1
                bk = (sj >> k) & 1
                if bl != bk:
                    state[i] = si ^ (1 << l)
                    state[j] = sj ^ (1 << k)
    return ParticleRun(state, events, accepted, occupation)


def occupation_tv(measure, run):
    """TV between a run's time-weighted occupation and the exact shell law."""
    if run.occupation is None:
        raise ValueError("run was not recorded with occupation")
    total = sum(run.occupation.values())
    emp = np.zeros(measure.codes.size)
    idx = measure.index_of(np.array(sorted(run.occupation), dtype=np.int64))
    for pos, c in zip(idx, sorted(run.occupation)):
        emp[pos] = run.occupation[c] / total
    return 0.5 * float(np.abs(emp - measure.probs).sum())


# -- count-shell masses by convolution ---------------------------------


def single_count_logdist(nu, blocks):
    """log distribution of the block-count vector of one copy of nu."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    counts = block_count_table(n, blocks)
    dims = tuple(len(b) + 1 for b in blocks)
    out = np.full(dims, -np.inf)
    flat = np.ravel_multi_index(counts.T, dims)
    mass = np.zeros(int(np.prod(dims)))
    np.add.at(mass, flat, nu)
    with np.errstate(divide="ignore"):
        return np.log(mass).reshape(dims)


def shell_log_mass(nu, blocks, N, T=None):
    """log nu^{xN}(shell T) by log-domain lattice convolution.

    With T None, returns the full lattice table for N copies.
    """
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    logq = single_count_logdist(nu, blocks)
    dims = tuple(N * len(b) + 1 for b in blocks)
    table = np.full(dims, -np.inf)
    table[tuple(0 for _ in blocks)] = 0.0
    support = np.argwhere(np.isfinite(logq))
    for _ in range(N):
        new = np.full(dims, -np.inf)
        for c in support:
            dst = tuple(slice(int(cb), d) for cb, d in zip(c, dims))
            src = tuple(slice(0, d - int(cb)) for cb, d in zip(c, dims))
            new[dst] = np.logaddexp(new[dst], table[src] + logq[tuple(c)])
        table = new
    if T is None:
        return table
    return float(table[tuple(int(t) for t in T)])


def restricted_mass(nu, blocks, N, rho):
    """nu^{xN}(shell at density rho), computed by the lattice DP.

    `rho` is a per-block plus fraction (N|b|rho_b must be an integer) or
    a tuple of integer counts directly.
    """
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    if all(isinstance(r, (int, np.integer)) for r in rho):
        T = tuple(int(r) for r in rho)
    else:
        T = density_to_counts(rho, N, blocks)
    lv = shell_log_mass(nu, blocks, N, T)
    return math.exp(lv) if lv > -745 else 0.0


def canonical_marginal(nu, blocks, N, T, k):
    """Law of the first k slots under the conditioned product, as a dense
    array over (2**n)**k joint masks."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    counts = block_count_table(n, blocks)
    log_rest = shell_log_mass(nu, blocks, N - k)
    log_full = shell_log_mass(nu, blocks, N, T)
    size = 1 << n
    out = np.zeros((size,) * k)
    with np.errstate(divide="ignore"):
        log_nu = np.log(nu)
    for joint in np.ndindex(*(size,) * k):
        c = np.array(T) - counts[list(joint)].sum(axis=0)
        if np.any(c < 0) or any(cb >= d for cb, d in zip(c, log_rest.shape)):
            continue
        lv = float(log_nu[list(joint)].sum()) + float(log_rest[tuple(c)]) - log_full
        out[joint] = math.exp(lv) if lv > -745 else 0.0
    return out


def marginal_tv(nu, blocks, N, T, k):
    """TV between the k-slot marginal of the conditioned product and the
    unconditioned k-fold product."""
    marg = canonical_marginal(nu, blocks, N, T, k)
    prod = np.asarray(nu, dtype=float)
    for _ in range(k - 1):
        prod = np.multiply.outer(prod, nu)
    return 0.5 * float(np.abs(marg - prod).sum())


def local_clt_value(nu, blocks, N, T):
    """Gaussian point-mass prediction for the shell probability,
    including the spacing-2 lattice factor per block."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    counts = block_count_table(n, blocks)
    # spin-sum coordinates: M_b = 2 * count_b - |b|
    M = 2.0 * counts - np.array([len(b) for b in blocks])
    mean = nu @ M
    centered = M - mean
    V = (centered * nu[:, None]).T @ centered
    S = 2.0 * np.array(T, dtype=float) - N * np.array([len(b) for b in blocks])
    z = np.linalg.solve(np.linalg.cholesky(V), (S - N * mean) / math.sqrt(N))
    b = len(blocks)
    det = float(np.linalg.det(V))
    return (2.0 ** b) * math.exp(-0.5 * float(z @ z)) / ((2.0 * math.pi * N) ** (b / 2.0) * math.sqrt(det))


def check_irreducible(nu, blocks):
    """Every block count must be able to step by +1 somewhere in the
    support of the joint count distribution."""
    nu = np.asarray(nu, dtype=float)
    n = int(nu.size).bit_length() - 1
    blocks = check_partition(blocks, n)
    logq = single_count_logdist(nu, blocks)
    support = {tuple(c) for c in np.argwhere(np.isfinite(logq))}
    for bi, b in enumerate(blocks):
        ok = any(
            tuple(c[a] + (1 if a == bi else 0) for a in range(len(blocks))) in support
            for c in support
        )
        if not ok:
            raise ValueError(
                f"block {tuple(x + 1 for x in b)}: count support admits no +1 step; "
                "the density is not irreducible"
            )
    return True


@dataclass
class ChaosReport:
    N_grid: np.ndarray
    tv: np.ndarray
    slope: float


def chaos_scan(nu, blocks, k, N_grid):
    """Marginal chaos: TV of the k-slot marginal against the plain
    product along a grid of N, with the fitted log-log slope."""
    check_irreducible(nu, blocks)
    tvs = []
    for N in N_grid:
        T = canonical_counts(nu, blocks, N)
        tvs.append(marginal_tv(nu, blocks, int(N), T, k))
    tvs = np.array(tvs)
    slope = float(np.polyfit(np.log(np.asarray(N_grid, float)), np.log(tvs), 1)[0])
    return ChaosReport(np.asarray(N_grid), tvs, slope)


def entropic_chaos_gap(nu1, nu2, blocks, N):
    """| (1/N) H(shell product of nu1 | shell product of nu2) - H(nu1|nu2) |.

    Both densities must share the shell (same canonical counts at N) and
    nu1 must be absolutely continuous w.r.t. nu2.
    """
    nu1 = check_probvec(np.asarray(nu1, dtype=float))
    nu2 = check_probvec(np.asarray(nu2, dtype=float))
    T1 = canonical_counts(nu1, blocks, N)
    T2 = canonical_counts(nu2, blocks, N)
    if T1 != T2:
        raise ValueError(f"canonical counts differ at N = {N}: {T1} vs {T2}")
    if np.any((nu1 > 0) & (nu2 == 0)):
        return math.inf
    marg1 = canonical_marginal(nu1, blocks, N, T1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(nu1 > 0, np.log(np.where(nu1 > 0, nu1, 1.0) / np.where(nu2 > 0, nu2, 1.0)), 0.0)
    cross = float(marg1 @ ratio)
    mass_term = (shell_log_mass(nu1, blocks, N, T1) - shell_log_mass(nu2, blocks, N, T2)) / N
    h_per_slot = cross - mass_term
    return abs(h_per_slot - relative_entropy(nu1, nu2))


def _fisher_per_slot(ctx, mu, nu, N):
    """(1/N) Dirichlet(F_N, log F_N) for the shell likelihood ratio
    F_N between the conditioned products of nu and mu."""
    if N * ctx.n > ENUMERATION_GATE:
        raise CapacityError(f"exact route gated at N*n <= {ENUMERATION_GATE}")
    T = canonical_counts(nu, ctx.blocks, N)
    T_mu = canonical_counts(mu, ctx.blocks, N)
    if T != T_mu:
        raise ValueError(f"canonical counts differ at N = {N}: tilt is off the shell")
    with np.errstate(divide="ignore"):
        gamma_mu = restricted_product_measure(np.log(mu), N, ctx.blocks, T)
        gamma_nu = restricted_product_measure(np.log(nu), N, ctx.blocks, T)
    F = gamma_nu.probs / gamma_mu.probs
    return dirichlet_form(gamma_mu, F, np.log(F), kernel=ctx.K) / N


def _tilted_pair(ctx, h, f):
    from .dynamics import dissipation  # local import to avoid a cycle at load

    mu = np.exp(log_gibbs_weights(ctx.J, h))
    mu /= mu.sum()
    f = np.asarray(f, dtype=float)
    if np.min(f) <= 0:
        raise ValueError("the density ratio must be strictly positive")
    f = f / float(mu @ f)
    nu = f * mu
    nu /= nu.sum()
    return mu, nu, 2.0 * dissipation(ctx, f, mu)


def fisher_chaos_gap(ctx, h, f, N):
    """| (1/N) Dirichlet(F_N, log F_N) - 2 * dissipation(f) | for the
    shell likelihood ratio F_N between the tilted and plain conditioned
    products."""
    mu, nu, target = _tilted_pair(ctx, h, f)
    return abs(_fisher_per_slot(ctx, mu, nu, N) - target)


@dataclass
class FisherChaosTable:
    N_grid: np.ndarray
    per_slot: np.ndarray
    gap: np.ndarray
    target: float      # 2 * dissipation of the single-configuration density


def fisher_chaos_check(ctx, h, f, N_grid):
    """Table of the per-slot Dirichlet value and its gap to twice the
    single-configuration dissipation along a grid of N."""
    mu, nu, target = _tilted_pair(ctx, h, f)
    check_irreducible(nu, ctx.blocks)
    per = np.array([_fisher_per_slot(ctx, mu, nu, int(N)) for N in N_grid])
    return FisherChaosTable(np.asarray(N_grid), per, np.abs(per - target), target)
