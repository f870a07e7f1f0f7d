"""Ball-relocation walks on fixed-magnetization slices of an Ising cube.

A configuration on L sites with a prescribed spin sum per block is read
as balls (plus spins) on sites. Each ball carries a rate-1 clock; when
it rings, the ball jumps to a vacancy in its own block (possibly back
to its own site), chosen with probability proportional to the weight of
the resulting configuration. The walk is reversible for the conditioned
Ising measure on the slice, and its entropy-production constants, the
entropy factorization across blocks, the tilted covariance bound, and
the negative-correlation property of the zero-interaction case are all
checkable exactly at small L.

Enumeration is gated at L <= 20 and dense generators at L <= 14.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import check_partition, entropy_functional, jacobi_eigvals
from .errors import CapacityError, FitError

ENUMERATION_GATE = 20
DENSE_GATE = 14


def _check_sym(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class DuInstance:
    """A slice-constrained Ising system: sites, couplings, fields,
    conserved blocks and their spin sums."""

    L: int
    lam_matrix: np.ndarray
    w: np.ndarray
    blocks: tuple
    M: tuple

    def __post_init__(self):
        lam = _check_sym(self.lam_matrix, "interaction matrix")
        if lam.shape[0] != self.L:
            raise ValueError("interaction matrix size must match the site count")
        w = np.asarray(self.w, dtype=float)
        if w.shape != (self.L,):
            raise ValueError("field vector size must match the site count")
        blocks = check_partition(self.blocks, self.L)
        M = tuple(int(m) for m in self.M)
        if len(M) != len(blocks):
            raise ValueError("one spin sum per block required")
        for b, m in zip(blocks, M):
            if (len(b) + m) % 2 != 0:
                raise ValueError(
                    f"block {tuple(x + 1 for x in b)}: size {len(b)} and spin sum {m} "
                    "have different parity, the slice is empty"
                )
            if abs(m) > len(b):
                raise ValueError(f"spin sum {m} impossible for a block of {len(b)} sites")
        object.__setattr__(self, "lam_matrix", lam)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "M", M)

    @property
    def balls(self):
        """number of plus spins per block"""
        return tuple((len(b) + m) // 2 for b, m in zip(self.blocks, self.M))

    def top_eigenvalue(self):
        return float(jacobi_eigvals(self.lam_matrix)[-1]) if self.L > 1 else float(self.lam_matrix[0, 0])


def single_block_instance(L, M, lam_matrix=None, w=None):
    lam = np.zeros((L, L)) if lam_matrix is None else lam_matrix
    wv = np.zeros(L) if w is None else w
    return DuInstance(L, lam, wv, (tuple(range(L)),), (M,))


@dataclass
class DuMeasure:
    inst: DuInstance
    codes: np.ndarray
    probs: np.ndarray
    logw: np.ndarray
    spins: np.ndarray  # (states, L) floats, +-1

    def index_of(self, codes):
        idx = np.searchsorted(self.codes, codes)
        if np.any(self.codes[np.clip(idx, 0, len(self.codes) - 1)] != codes):
            raise KeyError("configuration outside the slice")
        return idx

    def mean(self):
        return self.probs @ self.spins

    def covariance(self):
        m = self.mean()
        centered = self.spins - m
        return (centered * self.probs[:, None]).T @ centered


def du_measure(inst):
    L = inst.L
    if L > ENUMERATION_GATE:
        raise CapacityError(f"slice enumeration gated at L <= {ENUMERATION_GATE}")
    codes = np.arange(1 << L, dtype=np.int64)
    keep = np.ones(codes.size, dtype=bool)
    for b, k in zip(inst.blocks, inst.balls):
        bm = 0
        for i in b:
            bm |= 1 << i
        keep &= np.bitwise_count((codes & bm).astype(np.uint64)).astype(int) == k
    codes = codes[keep]
    bits = ((codes[:, None] >> np.arange(L)) & 1).astype(float)
    spins = 2.0 * bits - 1.0
    logw = 0.5 * np.einsum("si,ij,sj->s", spins, inst.lam_matrix, spins) + spins @ inst.w
    shift = logw.max()
    probs = np.exp(logw - shift)
    probs /= probs.sum()
    return DuMeasure(inst, codes, probs, logw, spins)


def tilt(meas, v):
    """Reweight by exp(<v, spins>) on the same slice."""
    v = np.asarray(v, dtype=float)
    logw = meas.logw + meas.spins @ v
    shift = logw.max()
    probs = np.exp(logw - shift)
    probs /= probs.sum()
    return DuMeasure(meas.inst, meas.codes, probs, logw, meas.spins)


def _log_weight_of(inst, code):
    s = 2.0 * ((code >> np.arange(inst.L)) & 1) - 1.0
    return 0.5 * float(s @ inst.lam_matrix @ s) + float(s @ inst.w)


def du_rate(meas, code, i, j):
    """Jump rate from one configuration to its (i, j) ball move; zero
    unless site i holds a ball, site j a hole, and both share a block."""
    inst = meas.inst
    if not ((code >> i) & 1) or ((code >> j) & 1 and j != i):
        return 0.0
    bi = next(b for b in inst.blocks if i in b)
    if j not in bi:
        return 0.0
    avail = [k for k in bi if not ((code >> k) & 1)] + [i]
    logs = np.array([_log_weight_of(inst, code ^ ((1 << i) | (1 << k)) if k != i else code) for k in avail])
    target = _log_weight_of(inst, code ^ ((1 << i) | (1 << j)) if j != i else code)
    shift = logs.max()
    return float(np.exp(target - shift) / np.exp(logs - shift).sum())


@dataclass
class DuTransitions:
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray    # c(src -> dst), proper jumps only
    weight: np.ndarray  # nu(src) * rate / 2

    def dirichlet(self, F, G):
        return float(np.sum(self.weight * (F[self.dst] - F[self.src]) * (G[self.dst] - G[self.src])))


def du_transitions(meas):
    """All proper ball moves with their rates, vectorized over the slice."""
    inst = meas.inst
    codes = meas.codes
    size = codes.size
    bits = (codes[:, None] >> np.arange(inst.L)) & 1
    srcs, dsts, rates = [], [], []
    for b in inst.blocks:
        for i in b:
            occ = bits[:, i] == 1
            if not np.any(occ):
                continue
            # denominator: weights of all available moves, stay included
            denom = np.zeros(size)
            denom[occ] = np.exp(meas.logw[occ])
            for k in b:
                if k == i:
                    continue
                can = occ & (bits[:, k] == 0)
                if not np.any(can):
                    continue
                moved = meas.index_of(codes[can] ^ ((1 << i) | (1 << k)))
                denom[can] += np.exp(meas.logw[moved])
            for j in b:
                if j == i:
                    continue
                can = occ & (bits[:, j] == 0)
                if not np.any(can):
                    continue
                dst = meas.index_of(codes[can] ^ ((1 << i) | (1 << j)))
                r = np.exp(meas.logw[dst]) / denom[can]
                srcs.append(np.flatnonzero(can))
                dsts.append(dst)
                rates.append(r)
    if not srcs:
        z = np.zeros(0)
        return DuTransitions(z.astype(int), z.astype(int), z, z)
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    rate = np.concatenate(rates)
    return DuTransitions(src, dst, rate, meas.probs[src] * rate / 2.0)


def du_generator(meas):
    if meas.inst.L > DENSE_GATE:
        raise CapacityError(f"dense generators gated at L <= {DENSE_GATE}")
    tab = du_transitions(meas)
    size = meas.codes.size
    Lmat = np.zeros((size, size))
    np.add.at(Lmat, (tab.src, tab.dst), tab.rate)
    np.add.at(Lmat, (tab.src, tab.src), -tab.rate)
    return Lmat


def detailed_balance_residual(meas, tab=None):
    tab = du_transitions(meas) if tab is None else tab
    flow = np.zeros((meas.codes.size,) * 2)
    np.add.at(flow, (tab.src, tab.dst), meas.probs[tab.src] * tab.rate)
    return float(np.abs(flow - flow.T).max())


def is_irreducible(meas, tab=None):
    """Single communicating class under proper moves (undirected search)."""
    tab = du_transitions(meas) if tab is None else tab
    size = meas.codes.size
    seen = np.zeros(size, dtype=bool)
    stack = [0]
    seen[0] = True
    adj = {}
    for s, d in zip(tab.src, tab.dst):
        adj.setdefault(int(s), []).append(int(d))
    while stack:
        v = stack.pop()
        for u in adj.get(v, ()):
            if not seen[u]:
                seen[u] = True
                stack.append(u)
    return bool(seen.all())


def spectral_gap(meas, tab=None):
    """Smallest nonzero decay rate of the walk, from the symmetrized
    generator."""
    if meas.inst.L > DENSE_GATE:
        raise CapacityError(f"dense spectra gated at L <= {DENSE_GATE}")
    Lmat = du_generator(meas)
    sq = np.sqrt(meas.probs)
    S = Lmat * sq[:, None] / sq[None, :]
    S = (S + S.T) / 2.0
    evals = np.linalg.eigvalsh(S)
    rates = -evals[evals < -1e-12]
    return float(rates.min()) if rates.size else 0.0


# -- scans --------------------------------------------------------------


def _sample_function(size, trial, rng):
    kind = trial % 3
    if kind == 0:
        s = float(rng.choice([0.5, 1.0, 2.0]))
        return np.exp(s * rng.standard_normal(size))
    if kind == 1:
        F = np.full(size, 1e-4)
        F[int(rng.integers(size))] = 1.0
        return F
    return 1.0 + 0.9 * rng.uniform(-1.0, 1.0, size=size)


@dataclass
class DuScanReport:
    min_ratio: float
    median_ratio: float
    constant: float
    constant_applicable: bool
    samples: int
    discarded: int
    gap: float | None = None


def du_constants(inst):
    """(single-walk constant, multicomponent constant, applicable)."""
    lam = inst.top_eigenvalue()
    eigs = jacobi_eigvals(inst.lam_matrix) if inst.L > 1 else np.array([lam])
    applicable = bool(eigs[0] > -1e-10 and lam < 0.5)
    c1 = 1.0 - 2.0 * lam
    return c1, c1 * c1, applicable


def _gap_probe(meas):
    """The slowest mode and functions 1 + eps * g probing it.

    On such perturbations the entropy-production ratio approaches twice
    the spectral gap, which is its infimum over this family; including
    them makes `min_ratio <= 2 * gap + tol` a checkable ordering
    (random sampling alone only produces upper bounds on the true
    constant, so it can land anywhere above it).
    """
    Lmat = du_generator(meas)
    sq = np.sqrt(meas.probs)
    S = Lmat * sq[:, None] / sq[None, :]
    S = (S + S.T) / 2.0
    evals, vecs = np.linalg.eigh(S)
    decaying = np.flatnonzero(evals < -1e-12)
    if decaying.size == 0:
        return None, []
    top = decaying[-1]
    gap = -float(evals[top])
    g = vecs[:, top] / sq
    g = g / np.abs(g).max()
    return gap, [1.0 + eps * g for eps in (1e-2, 1e-3)]


def du_mlsi_scan(meas, trials, rng, gap_probe=True):
    tab = du_transitions(meas)
    size = meas.codes.size
    c1, c2, ok = du_constants(meas.inst)
    constant = c1 if len(meas.inst.blocks) == 1 else c2
    samples = [_sample_function(size, trial, rng) for trial in range(trials)]
    gap = None
    if gap_probe and meas.inst.L <= DENSE_GATE and size > 1:
        gap, probes = _gap_probe(meas)
        samples.extend(probes)
    ratios = []
    discarded = 0
    for F in samples:
        ent = entropy_functional(meas.probs, F)
        if ent < 1e-13:
            discarded += 1
            continue
        ratios.append(tab.dirichlet(F, np.log(F)) / ent)
    if not ratios:
        raise FitError("no usable test functions")
    ratios = np.array(ratios)
    return DuScanReport(
        float(ratios.min()), float(np.median(ratios)), constant, ok, len(ratios), discarded, gap
    )


# -- entropy factorization ---------------------------------------------


def _grouped_entropy(probs, F, keys):
    """sum over groups of P(group) * Ent of F under the conditional,
    grouping states by the integer key."""
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    p = probs[order]
    f = F[order]
    bounds = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1], True])
    total = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        mass = p[a:b].sum()
        if mass <= 0:
            continue
        total += mass * entropy_functional(p[a:b] / mass, f[a:b])
    return total


def block_factorization_value(meas, F):
    """sum over blocks of nu[Ent of F inside the block given the rest]."""
    total = 0.0
    for b in meas.inst.blocks:
        bm = 0
        for i in b:
            bm |= 1 << i
        keys = meas.codes & ~np.int64(bm)
        total += _grouped_entropy(meas.probs, F, keys)
    return total


def factorization_check(meas, trials, rng):
    """min over sampled F of the block-factorization sum over Ent."""
    c1, _, ok = du_constants(meas.inst)
    size = meas.codes.size
    ratios = []
    discarded = 0
    for trial in range(trials):
        F = _sample_function(size, trial, rng)
        ent = entropy_functional(meas.probs, F)
        if ent < 1e-13:
            discarded += 1
            continue
        ratios.append(block_factorization_value(meas, F) / ent)
    if not ratios:
        raise FitError("no usable test functions")
    ratios = np.array(ratios)
    return DuScanReport(float(ratios.min()), float(np.median(ratios)), c1, ok, len(ratios), discarded)


def _ball_groups(meas):
    """Group states by the configuration left after removing one ball:
    returns a map from reduced code to (state index array, ball site array)."""
    groups = {}
    bits = (meas.codes[:, None] >> np.arange(meas.inst.L)) & 1
    for idx in range(meas.codes.size):
        code = int(meas.codes[idx])
        for i in np.flatnonzero(bits[idx]):
            groups.setdefault(code & ~(1 << int(i)), []).append(idx)
    return groups


def ball_factorization_value(meas, F):
    """sum over ball coordinates of the expected conditional entropy of
    F given the positions of all other balls (single-block slices)."""
    if len(meas.inst.blocks) != 1:
        raise ValueError("ball coordinates are defined for single-block slices")
    total = 0.0
    for idxs in _ball_groups(meas).values():
        idxs = np.array(idxs)
        mass = meas.probs[idxs].sum()
        if mass <= 0:
            continue
        total += mass * entropy_functional(meas.probs[idxs] / mass, F[idxs])
    return total


def ball_dirichlet_value(meas, F, G):
    """sum over ball coordinates of the expected conditional covariance;
    equals the walk's Dirichlet form on the slice."""
    if len(meas.inst.blocks) != 1:
        raise ValueError("ball coordinates are defined for single-block slices")
    total = 0.0
    for idxs in _ball_groups(meas).values():
        idxs = np.array(idxs)
        mass = meas.probs[idxs].sum()
        if mass <= 0:
            continue
        q = meas.probs[idxs] / mass
        cov = float(q @ (F[idxs] * G[idxs])) - float(q @ F[idxs]) * float(q @ G[idxs])
        total += mass * cov
    return total


def jensen_residual(meas, F):
    """max over ball-removal groups of Ent minus Cov(F, log F) under the
    conditional; nonpositive up to rounding."""
    if len(meas.inst.blocks) != 1:
        raise ValueError("ball coordinates are defined for single-block slices")
    logF = np.log(F)
    worst = -math.inf
    for idxs in _ball_groups(meas).values():
        idxs = np.array(idxs)
        mass = meas.probs[idxs].sum()
        if mass <= 0:
            continue
        q = meas.probs[idxs] / mass
        ent = entropy_functional(q, F[idxs])
        cov = float(q @ (F[idxs] * logF[idxs])) - float(q @ F[idxs]) * float(q @ logF[idxs])
        worst = max(worst, ent - cov)
    return worst


# -- covariance and correlation checks ---------------------------------


@dataclass
class CovReport:
    max_eigenvalue: float
    bound: float
    regularized: bool
    samples: int
    worst_tilt: np.ndarray


def cov_bound_check(inst, tilt_samples, rng):
    """max eigenvalue of the covariance over random and extreme tilts,
    against 2/(1 - 2 lam). Semidefinite interactions are nudged to
    positive definite by +1e-9 on the diagonal."""
    lam = inst.top_eigenvalue()
    if lam >= 0.5:
        raise ValueError(f"top eigenvalue {lam} >= 1/2, no covariance bound")
    eigs = jacobi_eigvals(inst.lam_matrix) if inst.L > 1 else np.array([lam])
    if eigs[0] < -1e-10:
        raise ValueError("interaction matrix must be nonnegative definite")
    regularized = bool(eigs[0] < 1e-12)
    if regularized:
        inst = DuInstance(
            inst.L, inst.lam_matrix + 1e-9 * np.eye(inst.L), inst.w, inst.blocks, inst.M
        )
        lam = inst.top_eigenvalue()
    meas = du_measure(inst)
    bound = 2.0 / (1.0 - 2.0 * lam)
    tilts = [np.zeros(inst.L)]
    for _ in range(tilt_samples):
        scale = float(rng.choice([0.3, 1.0, 3.0]))
        tilts.append(scale * rng.standard_normal(inst.L))
    for i in range(inst.L):
        for s in (30.0, -30.0):
            v = np.zeros(inst.L)
            v[i] = s
            tilts.append(v)
    worst = -math.inf
    worst_v = tilts[0]
    for v in tilts:
        cov = tilt(meas, v).covariance()
        top = float(jacobi_eigvals(cov)[-1]) if inst.L > 1 else float(cov[0, 0])
        if top > worst:
            worst = top
            worst_v = v
    return CovReport(worst, bound, regularized, len(tilts), np.asarray(worst_v))


def negcorr_max_offdiag(meas):
    """max off-diagonal covariance entry; for zero interaction the slice
    law is a conditioned product, which is negatively correlated."""
    if np.any(meas.inst.lam_matrix != 0.0):
        raise ValueError("negative correlation is claimed for zero interaction only")
    cov = meas.covariance()
    return float(cov[~np.eye(meas.inst.L, dtype=bool)].max())


@dataclass
class EigenConditionReport:
    top: float
    second: float
    top_vector_constant: bool
    stated_ok: bool
    relaxed_ok: bool


def eigenvalue_condition_report(inst):
    """Stated hypothesis versus the relaxed one that ignores a constant
    top eigenvector; flags instances where only the relaxed form holds."""
    lam_m = inst.lam_matrix
    evals, vecs = np.linalg.eigh(lam_m)
    top = float(evals[-1])
    second = float(evals[-2]) if inst.L > 1 else top
    v = vecs[:, -1]
    const = bool(np.allclose(v, v[0], atol=1e-8))
    return EigenConditionReport(
        top, second, const, top < 0.5, (second < 0.5) if const else (top < 0.5)
    )


# -- correspondence with the N-slot exchange system --------------------


def particle_shaped_instance(J, h_slots, N, T):
    """The L = N*n single-slice system whose conditioned measure matches
    the N-slot conditioned product: block-diagonal interaction, fields
    laid out slot by slot."""
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    L = N * n
    lam = np.kron(np.eye(N), J)
    if h_slots is None:
        w = np.zeros(L)
    else:
        h_slots = np.asarray(h_slots, dtype=float)
        w = np.tile(h_slots, N) if h_slots.ndim == 1 else np.concatenate(h_slots)
    M = 2 * int(T) - L
    return single_block_instance(L, M, lam, w)


@dataclass
class BridgeReport:
    min_margin: float
    constant: float
    samples: int


def bridge_check(particle_measure, du_meas, trials, rng):
    """The all-pairs exchange form dominates c = (1/4) e^{-8(Jbar+hbar)}
    times the ball-walk form, sampled over positive F.

    Both measures must enumerate the same slice (identical codes); the
    exchange system's slot layout puts slot i at bits [i*n, (i+1)*n),
    matching the flat site layout of the slice.
    """
    from .core import interaction_row_norm
    from .kac import dirichlet_form

    if not np.array_equal(particle_measure.codes, du_meas.codes):
        raise ValueError("slice and slot-system state spaces differ")
    n = particle_measure.n
    J = du_meas.inst.lam_matrix[:n, :n]
    jb = interaction_row_norm(J)
    hb = float(np.max(np.abs(du_meas.inst.w))) if du_meas.inst.w.size else 0.0
    const = 0.25 * math.exp(-8.0 * (jb + hb))
    tab = du_transitions(du_meas)
    size = du_meas.codes.size
    worst = math.inf
    for trial in range(trials):
        F = _sample_function(size, trial, rng)
        logF = np.log(F)
        lhs = dirichlet_form(particle_measure, F, logF, kernel=None)
        rhs = const * tab.dirichlet(F, logF)
        worst = min(worst, lhs - rhs)
    return BridgeReport(worst, const, trials)
