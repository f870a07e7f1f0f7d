"""The quadratic mean-field flow dp/dt = (p o p) - p and its entropy budget.

The flow conserves every block magnetization of the transport kernel's
irreducible partition, keeps mass and nonnegativity, and relaxes to the
unique quadratic Gibbs state with the same conserved profile. Relative
entropy against that state is non-increasing; its derivative is minus a
nonnegative dissipation sum, which the decay machinery compares against
a closed-form lower bound on the exponential rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    check_probvec,
    check_regular,
    entropy_functional,
    gibbs,
    interaction_row_norm,
    jacobi_eigvals,
    log_gibbs_weights,
    magnetization_profile,
    match_block_means,
    relative_entropy,
    solve_field,
    tv_distance,
)
from .errors import ConvergenceError, FitError

RENORM_TOL = 1e-10
DENSITY_FLOOR = 1e-300
ENTROPY_NOISE = 1e-12


def flow_rhs(ctx, p):
    return ctx.product(p, p) - p


def stationarity_residual(ctx, p):
    """max-norm of (p o p) - p."""
    p = check_probvec(p, ctx.n)
    return float(np.max(np.abs(ctx.product(p, p) - p)))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), 2**n)
    h_eq: np.ndarray
    mu_eq: np.ndarray
    blocks: tuple
    requested_t_end: float
    stopped_early: bool = False

    @property
    def final(self):
        return self.states[-1]

    def entropies(self):
        return np.array([relative_entropy(p, self.mu_eq) for p in self.states])

    def tv_to_equilibrium(self):
        return np.array([tv_distance(p, self.mu_eq) for p in self.states])


def _rk4_step(ctx, p, dt):
    k1 = ctx.product(p, p, check=False) - p
    y = p + (0.5 * dt) * k1
    k2 = ctx.product(y, y, check=False) - y
    y = p + (0.5 * dt) * k2
    k3 = ctx.product(y, y, check=False) - y
    y = p + dt * k3
    k4 = ctx.product(y, y, check=False) - y
    return p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(ctx, p, dt, depth=0):
    if depth > 24:
        raise ConvergenceError("step-size halving did not stabilize the step")
    p_new = _rk4_step(ctx, p, dt)
    drift = abs(float(np.sum(p_new)) - 1.0)
    if drift < RENORM_TOL and float(np.min(p_new)) > -1e-12:
        p_new = np.maximum(p_new, 0.0)
        return p_new / np.sum(p_new)
    half = _advance(ctx, p, 0.5 * dt, depth + 1)
    return _advance(ctx, half, 0.5 * dt, depth + 1)


def evolve(ctx, p0, t_end, dt, store_every=1, stop_below_entropy=None):
    """Integrate the flow with fixed-step RK4 on a uniform grid.

    Every accepted step renormalizes; a step whose raw mass drifts by
    1e-10 or more (or goes measurably negative) is redone as two half
    steps. States are recorded every `store_every` grid points plus the
    final one. If `stop_below_entropy` is set, integration stops once
    the recorded relative entropy to the matched equilibrium falls below
    it (monotonicity makes everything after provably smaller).

    The initial profile must be strictly interior: any block pinned at
    |m| = 1 is rejected with the block named.
    """
    p0 = check_probvec(p0, ctx.n)
    if t_end < 0 or dt <= 0:
        raise ValueError("need t_end >= 0 and dt > 0")
    m0 = check_regular(p0, ctx.blocks, ctx.n)
    h_eq = solve_field(ctx.J, ctx.blocks, m0)
    mu_eq = gibbs(ctx.J, h_eq)
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end = {t_end} is not a multiple of dt = {dt}")
    times = [0.0]
    states = [p0.copy()]
    p = p0.copy()
    stopped = False
    for i in range(1, nsteps + 1):
        p = _advance(ctx, p, dt)
        if i % store_every == 0 or i == nsteps:
            times.append(i * dt)
            states.append(p.copy())
            if stop_below_entropy is not None:
                if relative_entropy(p, mu_eq) < stop_below_entropy:
                    stopped = True
                    break
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        h_eq=h_eq,
        mu_eq=mu_eq,
        blocks=ctx.blocks,
        requested_t_end=float(t_end),
        stopped_early=stopped,
    )


def dissipation(ctx, f, mu):
    """Entropy production of the flow at density f*mu, as the symmetrized
    nonnegative pair sum. Terms where either pair product vanishes are
    dropped (the diagnostic convention for clipped densities); for
    strictly positive f this is exact.
    """
    mu = check_probvec(mu, ctx.n)
    f = np.asarray(f, dtype=float)
    if f.shape != mu.shape or np.min(f) < 0:
        raise ValueError("f must be a nonnegative vector on the same state space")
    if abs(float(mu @ f) - 1.0) > 1e-8:
        raise ValueError("f must average to 1 under mu")
    masks = ctx.masks
    total = 0.0
    mu_pair = np.multiply.outer(mu, mu)
    a = np.multiply.outer(f, f)
    for l, k, w in ctx.pairs:
        P = ctx.acceptance_matrix(l, k)
        ml, mk = 1 << l, 1 << k
        bitk = ctx._bit[k]
        bitl = ctx._bit[l]
        tau = np.where(bitk[None, :], (masks | ml)[:, None], (masks & ~ml)[:, None])
        tau_p = np.where(bitl[:, None], (masks | mk)[None, :], (masks & ~mk)[None, :])
        b = f[tau] * f[tau_p]
        good = (a > 0.0) & (b > 0.0) & (a != b)
        if not np.any(good):
            continue
        diff = a[good] - b[good]
        total += w * float(np.sum(mu_pair[good] * P[good] * diff * np.log(a[good] / b[good])))
    return 0.25 * total


def dissipation_at(ctx, p, mu):
    f = np.asarray(p, dtype=float) / np.maximum(np.asarray(mu, dtype=float), DENSITY_FLOOR)
    return dissipation(ctx, f, mu)


@dataclass(frozen=True)
class AlphaBound:
    value: float | None
    applicable: bool
    reason: str
    lam: float
    row_norm: float


def alpha_bound(J, n=None):
    """Closed-form exponential-rate lower bound for the block-uniform
    transport kernel: (1/4n) (1 - 2 lam)^2 exp(-16 Jbar). Tagged
    inapplicable when J has a negative eigenvalue or lam >= 1/2."""
    J = np.asarray(J, dtype=float)
    if n is None:
        n = J.shape[0]
    eigs = jacobi_eigvals(J) if J.shape[0] > 1 else np.array([float(J[0, 0])])
    lam = float(eigs[-1])
    jb = interaction_row_norm(J)
    if eigs[0] < -1e-10:
        return AlphaBound(None, False, f"J has negative eigenvalue {eigs[0]}", lam, jb)
    if lam >= 0.5:
        return AlphaBound(None, False, f"largest eigenvalue {lam} >= 1/2", lam, jb)
    value = (1.0 - 2.0 * lam) ** 2 * math.exp(-16.0 * jb) / (4.0 * n)
    return AlphaBound(value, True, "", lam, jb)


@dataclass
class DecayReport:
    times: np.ndarray
    entropy: np.ndarray
    tv: np.ndarray
    tv_bound: np.ndarray | None
    alpha_fit: float
    bound: AlphaBound
    fit_points: int
    entropy_identically_zero: bool = False


def decay_report(traj, J=None):
    """Fit the exponential entropy-decay rate of a trajectory.

    The fit regresses log H on t after dropping the leading 10% of the
    time span and every sample below the 1e-12 noise floor. A trajectory
    whose entropy never clears the floor certifies *every* rate (H(t) <=
    H(0) e^{-a t} holds trivially), reported as alpha_fit = +inf with
    the `entropy_identically_zero` flag. Fewer than 5 usable points
    raises FitError.
    """
    H = traj.entropies()
    tv = traj.tv_to_equilibrium()
    if J is None:
        bound = AlphaBound(None, False, "no interaction matrix supplied", math.nan, math.nan)
    else:
        bound = alpha_bound(J, n=int(math.log2(traj.states.shape[1])))
    tv_curve = None
    if bound.applicable:
        hbar = float(np.max(np.abs(traj.h_eq)))
        C = bound.lam + 2.0 * hbar + math.log(2.0)
        nn = int(math.log2(traj.states.shape[1]))
        tv_curve = np.sqrt(C * nn / 2.0) * np.exp(-0.5 * bound.value * traj.times)
    if np.all(H < ENTROPY_NOISE):
        return DecayReport(traj.times, H, tv, tv_curve, math.inf, bound, 0, True)
    t0 = traj.times[0] + 0.1 * (traj.times[-1] - traj.times[0])
    keep = (traj.times >= t0) & (H >= ENTROPY_NOISE)
    if int(np.sum(keep)) < 5:
        raise FitError(f"only {int(np.sum(keep))} usable samples above the noise floor")
    x = traj.times[keep]
    y = np.log(H[keep])
    slope = float(np.polyfit(x, y, 1)[0])
    return DecayReport(traj.times, H, tv, tv_curve, -slope, bound, int(np.sum(keep)))


@dataclass
class ScanReport:
    min_ratio: float
    median_ratio: float
    samples: int
    discarded: int
    bound: AlphaBound
    worst_f: np.ndarray | None = None


def _sample_density(rng, size, kind):
    if kind == 0:
        s = float(rng.choice([0.25, 0.5, 1.0, 2.0]))
        return np.exp(s * rng.standard_normal(size))
    if kind == 1:
        center = int(rng.integers(size))
        radius = int(rng.integers(1, max(2, size.bit_length() - 1)))
        masks = np.arange(size)
        ball = np.bitwise_count((masks ^ center).astype(np.uint64)) <= radius
        return 1e-3 + ball.astype(float)
    center = int(rng.integers(size))
    f = np.full(size, 1e-3)
    f[center] = 1.0
    return f


def nonlinear_mlsi_scan(ctx, h, trials, rng, return_worst=False):
    """Minimum of dissipation / entropy over random densities constrained
    to the equilibrium's conserved profile.

    Candidate densities (exponentials of Gaussian fields, Hamming-ball
    plateaus, near-point masses) are projected onto the constraint set
    by an exponential block tilt solved with the same damped Newton as
    the field solver, then normalized. Projection failures and the
    trivial density are discarded and counted.
    """
    mu = gibbs(ctx.J, h)
    log_mu = log_gibbs_weights(ctx.J, h)
    target = magnetization_profile(mu, ctx.blocks, ctx.n)
    bound = alpha_bound(ctx.J, ctx.n)
    size = 1 << ctx.n
    ratios = []
    discarded = 0
    worst = None
    for trial in range(trials):
        f0 = _sample_density(rng, size, trial % 3)
        with np.errstate(divide="ignore"):
            logf = np.log(f0)
        try:
            _, nu = match_block_means(log_mu + logf, ctx.blocks, target)
        except (ConvergenceError, ValueError):
            discarded += 1
            continue
        f = nu / mu
        ent = entropy_functional(mu, f)
        if ent < 1e-14:
            discarded += 1
            continue
        ratio = dissipation(ctx, f, mu) / ent
        if not ratios or ratio < min(ratios):
            worst = f
        ratios.append(ratio)
    if not ratios:
        raise FitError("no usable densities survived the constraint projection")
    ratios = np.array(ratios)
    return ScanReport(
        min_ratio=float(np.min(ratios)),
        median_ratio=float(np.median(ratios)),
        samples=len(ratios),
        discarded=discarded,
        bound=bound,
        worst_f=worst if return_worst else None,
    )
