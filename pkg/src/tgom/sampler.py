"""Metropolis-within-Gibbs sampler for the basic and the birth-cohort model.

One sweep updates, in order: the cell assignments z, every trajectory block
(beta0_jk, beta1_jk), the membership vectors g, and the Dirichlet parameters
(one set, or one per cohort).  The (j, k) trajectory blocks are independent
given z, so they are proposed and accepted together; that is the same
kernel as visiting them one at a time.

Randomness comes from :class:`tgom.rng.CounterStreams`.  Work on the z and g
blocks is split into fixed chunks of individuals, so the result does not
depend on how many worker threads process the chunks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from . import rng as streams_mod
from .chain import PosteriorChain
from .model import (
    CohortDirichletParams,
    CohortPartition,
    DirichletParams,
    PanelDataset,
    Priors,
    TrajectoryParams,
    ksum,
    log_prior,
    softplus,
)
from .rng import CounterStreams, dirichlet_from_uniforms, normals

log = logging.getLogger(__name__)

CHUNK = 512


class NumericalError(RuntimeError):
    """Raised when the chain leaves the region of finite log posterior."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 120_000
    burn_in: int = 20_000
    thin_keep_fraction: float = 0.2
    seed: int = 0
    proposal_sd_beta0: float = 0.05
    proposal_sd_beta1: float = 0.05
    proposal_sd_log_alpha: float = 0.1
    adapt: bool = True
    adapt_window: int = 100
    target_accept_range: tuple = (0.2, 0.5)
    # number of individuals whose membership draws are kept; -1 keeps all
    store_memberships: int = 0
    # optional floor on memberships inside the concentration update; None uses exact logs
    membership_floor: float | None = None
    progress_every: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "target_accept_range", tuple(float(v) for v in self.target_accept_range))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.n_iterations < 1:
            out.append("n_iterations must be >= 1")
        if not (0 <= self.burn_in < self.n_iterations):
            out.append("burn_in must satisfy 0 <= burn_in < n_iterations")
        if not (0 < self.thin_keep_fraction <= 1):
            out.append("thin_keep_fraction must be in (0, 1]")
        for name in ("proposal_sd_beta0", "proposal_sd_beta1", "proposal_sd_log_alpha"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if self.adapt_window < 1:
            out.append("adapt_window must be >= 1")
        lo, hi = self.target_accept_range
        if not (0 < lo < hi < 1):
            out.append("target_accept_range must satisfy 0 < lo < hi < 1")
        if not (0 <= self.seed < 2**64):
            out.append("seed must be a 64-bit unsigned integer")
        if self.membership_floor is not None and not (0 < self.membership_floor < 1):
            out.append("membership_floor must be in (0, 1) or null")
        if self.store_memberships < -1:
            out.append("store_memberships must be -1 (all) or >= 0")
        return out

    def keep(self, iteration: int) -> bool:
        """Whether a completed iteration (1-based) is recorded.

        Post burn-in iteration s is kept when floor(s*f) increases, which
        keeps every 5th iteration for f = 0.2 and yields exactly
        floor((n_iterations - burn_in) * f) draws.
        """
        s = iteration - self.burn_in
        if s < 1:
            return False
        f = Fraction(self.thin_keep_fraction).limit_denominator(10**6)
        return (s * f.numerator) // f.denominator > ((s - 1) * f.numerator) // f.denominator

    def n_draws(self) -> int:
        f = Fraction(self.thin_keep_fraction).limit_denominator(10**6)
        return ((self.n_iterations - self.burn_in) * f.numerator) // f.denominator


@dataclass(frozen=True)
class SweepRNG:
    """Streams of one iteration, plus the stream slot used by each profile label."""

    streams: CounterStreams
    iteration: int
    label_streams: tuple | None = None

    def slots(self, n_profiles):
        if self.label_streams is None:
            return np.arange(n_profiles)
        return np.asarray(self.label_streams)


@dataclass
class ChainState:
    params: TrajectoryParams
    g: np.ndarray          # (N, K)
    log_g: np.ndarray      # (N, K)
    z: np.ndarray          # (rows, J) int16, aligned with PanelDataset rows
    alpha: np.ndarray      # (C, K) Dirichlet parameters per cohort; C = 1 in the basic model
    iteration: int = 0
    sd_beta0: np.ndarray | None = None
    sd_beta1: np.ndarray | None = None
    sd_log_alpha: np.ndarray | None = None
    cohort: bool = False

    @property
    def n_profiles(self) -> int:
        return self.params.n_profiles

    @property
    def dirichlet(self):
        per = [DirichletParams.from_alpha(a) for a in self.alpha]
        return CohortDirichletParams(tuple(per)) if self.cohort else per[0]

    def copy(self) -> "ChainState":
        return ChainState(
            params=self.params, g=self.g.copy(), log_g=self.log_g.copy(), z=self.z.copy(),
            alpha=self.alpha.copy(), iteration=self.iteration,
            sd_beta0=None if self.sd_beta0 is None else self.sd_beta0.copy(),
            sd_beta1=None if self.sd_beta1 is None else self.sd_beta1.copy(),
            sd_log_alpha=None if self.sd_log_alpha is None else self.sd_log_alpha.copy(),
            cohort=self.cohort,
        )


def _chunks(n):
    return [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


def _map_chunks(fn, n, n_workers):
    parts = _chunks(n)
    if n_workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(lambda ab: fn(*ab), parts))
    return [fn(a, b) for a, b in parts]


# ---------------------------------------------------------------------------
# Step 1: assignments
# ---------------------------------------------------------------------------


def z_log_weights(params: TrajectoryParams, log_g_rows, ages, y):
    """Unnormalised log p(z = k) for each row and item: (rows, J, K)."""
    eta = params.linear_predictor(ages)
    sign = 1.0 - 2.0 * np.asarray(y, dtype=float)[..., None]
    return log_g_rows[:, None, :] - softplus(sign * eta)


def sample_z(state: ChainState, data: PanelDataset, rng: SweepRNG, n_workers: int = 1) -> np.ndarray:
    """Draw every cell assignment from its discrete full conditional.

    Uses the Gumbel-max trick with one uniform per (cell, profile), so a
    profile's draws come from its own stream slot.
    """
    K = state.n_profiles
    T, J = data.n_waves, data.n_items
    slots = rng.slots(K)

    def work(a, b):
        r0, r1 = data.row_start[a], data.row_start[b]
        if r1 == r0:
            return np.zeros((0, J), dtype=np.int16)
        ind = data.row_individual[r0:r1]
        lw = z_log_weights(state.params, state.log_g[ind], data.row_age[r0:r1], data.row_y[r0:r1])
        u = rng.streams.individual_uniforms(streams_mod.Z, rng.iteration, a, b - a, T * J * K)
        u = u.reshape(b - a, T, J, K)[ind - a, data.row_wave[r0:r1]][..., slots]
        gumbel = -np.log(-np.log(u))
        return np.argmax(lw + gumbel, axis=-1).astype(np.int16)

    parts = _map_chunks(work, data.n_individuals, n_workers)
    if not parts:
        return np.zeros((0, J), dtype=np.int16)
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Step 2: trajectories
# ---------------------------------------------------------------------------


@dataclass
class BetaStats:
    """Per (k, j) sums over the cells currently assigned to profile k."""

    sum_softplus: np.ndarray
    sum_y: np.ndarray
    sum_y_age: np.ndarray


def _cell_index(z, n_items):
    return (z.astype(np.intp) * n_items + np.arange(n_items)).ravel()


def beta_block_stats(beta0, beta1, z, data: PanelDataset, *, index=None, with_y=True) -> BetaStats:
    K, J = beta0.shape
    idx = _cell_index(z, J) if index is None else index
    age = np.repeat(data.row_age, J)
    eta = beta0.ravel()[idx] + beta1.ravel()[idx] * age
    n = K * J
    sp = np.bincount(idx, softplus(eta), minlength=n).reshape(K, J)
    if not with_y:
        return BetaStats(sp, None, None)
    y = data.row_y.ravel().astype(float)
    sy = np.bincount(idx, y, minlength=n).reshape(K, J)
    sya = np.bincount(idx, y * age, minlength=n).reshape(K, J)
    return BetaStats(sp, sy, sya)


def beta_log_ratio(beta0, beta1, prop0, prop1, z, data: PanelDataset, priors: Priors):
    """log acceptance ratio of the random-walk trajectory update, per (k, j).

    Product over the assigned cells of (1 + e^eta) / (1 + e^eta*), times the
    two Gaussian-prior / sufficient-statistic factors; zero prior means.
    """
    idx = _cell_index(z, beta0.shape[1])
    cur = beta_block_stats(beta0, beta1, z, data, index=idx)
    prop = beta_block_stats(prop0, prop1, z, data, index=idx, with_y=False)
    log_r = (cur.sum_softplus - prop.sum_softplus
             - (prop0**2 - beta0**2) / (2.0 * priors.sigma0_sq) + (prop0 - beta0) * cur.sum_y
             - (prop1**2 - beta1**2) / (2.0 * priors.sigma1_sq) + (prop1 - beta1) * cur.sum_y_age)
    return log_r, cur, prop


def sample_beta(state: ChainState, data: PanelDataset, rng: SweepRNG, priors: Priors):
    """Random-walk Metropolis update of every (beta0_jk, beta1_jk) pair.

    Returns ``(params, accepted, loglik)``; ``loglik[k, j]`` is the Bernoulli
    log-likelihood of the cells assigned to profile k on item j at the
    retained values.
    """
    b0, b1 = state.params.beta0, state.params.beta1
    K, J = b0.shape
    u = rng.streams.uniforms(streams_mod.BETA, rng.iteration, (K, J, 3))[rng.slots(K)]
    p0 = b0 + state.sd_beta0 * normals(u[..., 0])
    p1 = b1 + state.sd_beta1 * normals(u[..., 1])
    log_r, cur, prop = beta_log_ratio(b0, b1, p0, p1, state.z, data, priors)
    accept = np.log(u[..., 2]) < log_r
    new0 = np.where(accept, p0, b0)
    new1 = np.where(accept, p1, b1)
    ll_cur = b0 * cur.sum_y + b1 * cur.sum_y_age - cur.sum_softplus
    ll_prop = p0 * cur.sum_y + p1 * cur.sum_y_age - prop.sum_softplus
    return TrajectoryParams(new0, new1), accept, np.where(accept, ll_prop, ll_cur)


# ---------------------------------------------------------------------------
# Step 3: memberships
# ---------------------------------------------------------------------------


def assignment_counts(z, data: PanelDataset, n_profiles: int) -> np.ndarray:
    """c[i, k] = number of observed cells of individual i assigned to k."""
    N = data.n_individuals
    ind = np.repeat(data.row_individual, data.n_items)
    idx = ind * n_profiles + z.ravel().astype(np.int64)
    return np.bincount(idx, minlength=N * n_profiles).reshape(N, n_profiles).astype(float)


def sample_g(state: ChainState, data: PanelDataset, rng: SweepRNG, cohort_of=None, n_workers: int = 1):
    """Conjugate Dirichlet draw of every membership vector.

    Returns ``(g, log_g, counts)``.
    """
    K = state.n_profiles
    N = data.n_individuals
    slots = rng.slots(K)
    counts = assignment_counts(state.z, data, K)
    cohort_of = np.zeros(N, dtype=np.int64) if cohort_of is None else cohort_of
    shape = state.alpha[cohort_of] + counts

    def work(a, b):
        u = rng.streams.individual_uniforms(streams_mod.G, rng.iteration, a, b - a, 2 * K)
        u = u.reshape(b - a, K, 2)[:, slots]
        return dirichlet_from_uniforms(shape[a:b], u)

    parts = _map_chunks(work, N, n_workers)
    if not parts:
        return np.zeros((0, K)), np.zeros((0, K)), counts
    g = np.concatenate([p[0] for p in parts])
    log_g = np.concatenate([p[1] for p in parts])
    if not np.isfinite(log_g).all():
        bad = np.argwhere(~np.isfinite(log_g))[0]
        raise NumericalError("membership draw underflowed in log space",
                             {"individual": int(bad[0]), "shape": shape[bad[0]].tolist()})
    return g, log_g, counts


# ---------------------------------------------------------------------------
# Step 4: Dirichlet parameters
# ---------------------------------------------------------------------------


def log_alpha_target(alpha, n, sum_log_g, shape, rate):
    """Unnormalised log density of the Dirichlet parameter vector alpha.

    Prior: alpha0 ~ Gamma(shape, rate), xi ~ Dirichlet(1).  Mapped to alpha
    coordinates this carries the Jacobian alpha0^-(K-1).  Likelihood: ``n``
    membership vectors whose summed log components are
    ``sum_log_g``.
    """
    alpha = np.asarray(alpha, dtype=float)
    K = alpha.shape[-1]
    a0 = ksum(alpha)
    return ((shape - 1.0) * np.log(a0) - rate * a0 - (K - 1) * np.log(a0)
            + n * (gammaln(a0) - ksum(gammaln(alpha)))
            + ksum(alpha * sum_log_g))


def alpha_log_ratio(alpha, proposal, n, sum_log_g, shape, rate):
    """log acceptance ratio of the log-normal random-walk alpha update.

    Written factor by factor: Gamma prior on the concentration, Jacobian of
    (alpha0, xi) -> alpha, the log-normal Hastings correction
    prod(alpha*_k / alpha_k), the n-fold normalising-constant ratio and the
    geometric-mean-of-memberships term.
    """
    alpha = np.asarray(alpha, dtype=float)
    proposal = np.asarray(proposal, dtype=float)
    K = alpha.shape[-1]
    a0, p0 = ksum(alpha), ksum(proposal)
    log_ratio0 = np.log(p0) - np.log(a0)
    return (-rate * (p0 - a0)
            + (shape - 1.0) * log_ratio0
            - (K - 1) * log_ratio0
            + ksum(np.log(proposal) - np.log(alpha))
            + n * (gammaln(p0) - gammaln(a0) + ksum(gammaln(alpha) - gammaln(proposal)))
            + ksum((proposal - alpha) * sum_log_g))


def _alpha_sufficient(log_g, cohort_of, n_cohorts, floor=None):
    K = log_g.shape[1]
    # exact logs by default: a floor lifts the log-mean of small components
    # and so biases the concentration upwards
    if floor is not None:
        log_g = np.maximum(log_g, np.log(floor))
    n = np.bincount(cohort_of, minlength=n_cohorts).astype(float)
    s = np.zeros((n_cohorts, K))
    for k in range(K):
        s[:, k] = np.bincount(cohort_of, log_g[:, k], minlength=n_cohorts)
    return n, s


def sample_alpha_cohort(state: ChainState, rng: SweepRNG, priors: Priors, cohort_of=None,
                        membership_floor=None):
    """Per-cohort Metropolis-Hastings update of the Dirichlet parameters.

    The basic model is the one-cohort case with the (a_alpha, b_alpha) prior.
    Returns ``(alpha, accepted)`` with shapes (C, K) and (C,).
    """
    C, K = state.alpha.shape
    N = state.g.shape[0]
    cohort_of = np.zeros(N, dtype=np.int64) if cohort_of is None else cohort_of
    if state.cohort:
        shape, rate = priors.cohort_tau, priors.cohort_eta
    else:
        shape, rate = priors.a_alpha, priors.b_alpha
    n, s = _alpha_sufficient(state.log_g, cohort_of, C, membership_floor)
    u = rng.streams.uniforms(streams_mod.ALPHA, rng.iteration, (C, K + 1))
    z = normals(u[:, :K][:, rng.slots(K)])
    proposal = np.exp(np.log(state.alpha) + state.sd_log_alpha[:, None] * z)
    log_r = alpha_log_ratio(state.alpha, proposal, n, s, shape, rate)
    accept = np.log(u[:, K]) < log_r
    return np.where(accept[:, None], proposal, state.alpha), accept


def sample_alpha(state: ChainState, rng: SweepRNG, priors: Priors):
    alpha, accept = sample_alpha_cohort(state, rng, priors)
    return alpha, accept


# ---------------------------------------------------------------------------
# Adaptation, initialisation, log posterior
# ---------------------------------------------------------------------------


def adapt_proposals(acceptance_rates, sds, config: SamplerConfig, n_windows: int):
    """Scale proposal sds towards the target acceptance band.

    The step shrinks as 1/sqrt(window count); rates inside the band leave
    the sd unchanged.
    """
    lo, hi = config.target_accept_range
    step = 1.0 / np.sqrt(max(n_windows, 1))
    rates = np.asarray(acceptance_rates, dtype=float)
    factor = np.where(rates > hi, np.exp(step), np.where(rates < lo, np.exp(-step), 1.0))
    return np.asarray(sds, dtype=float) * factor


def initial_state(data: PanelDataset, priors: Priors, config: SamplerConfig, n_profiles: int,
                  n_cohorts: int = 1, cohort: bool = False, label_streams=None,
                  n_workers: int = 1) -> ChainState:
    """Overdispersed start: g ~ Dirichlet(1), beta ~ N(mu, 1), alpha0 = 1, xi uniform.

    The assignments are then drawn from their full conditional.
    """
    K, J, N = n_profiles, data.n_items, data.n_individuals
    streams = CounterStreams(config.seed)
    rng0 = SweepRNG(streams, 0, label_streams)
    slots = rng0.slots(K)
    u = streams.uniforms(streams_mod.INIT_BETA, 0, (K, J, 2))[slots]
    params = TrajectoryParams(priors.mu0 + normals(u[..., 0]), priors.mu1 + normals(u[..., 1]))
    if N:
        ug = streams.individual_uniforms(streams_mod.INIT_G, 0, 0, N, 2 * K).reshape(N, K, 2)[:, slots]
        g, log_g = dirichlet_from_uniforms(np.ones((N, K)), ug)
    else:
        g, log_g = np.zeros((0, K)), np.zeros((0, K))
    state = ChainState(
        params=params, g=g, log_g=log_g, z=np.zeros((data.n_rows, J), dtype=np.int16),
        alpha=np.full((n_cohorts, K), 1.0 / K), iteration=0,
        sd_beta0=np.full((K, J), config.proposal_sd_beta0),
        sd_beta1=np.full((K, J), config.proposal_sd_beta1),
        sd_log_alpha=np.full(n_cohorts, config.proposal_sd_log_alpha),
        cohort=cohort,
    )
    state.z = sample_z(state, data, rng0, n_workers)
    return state


def complete_log_posterior(state: ChainState, loglik, counts, cohort_of, priors: Priors) -> float:
    """Complete-data log posterior, using the exact log memberships."""
    lg = state.log_g
    a = state.alpha[cohort_of]
    a0 = ksum(a)
    dir_terms = gammaln(a0) - ksum(gammaln(a)) + ksum((a - 1.0) * lg)
    total = loglik.sum() + (counts * lg).sum() + dir_terms.sum()
    return float(total + log_prior(state.params, state.dirichlet, priors))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _membership_index(n, store):
    if store == -1 or store >= n:
        return np.arange(n)
    if store == 0:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.round(np.linspace(0, n - 1, store)).astype(np.int64))


def run_chain(data: PanelDataset, priors: Priors, config: SamplerConfig, n_profiles: int,
              partition: CohortPartition | None = None, *, n_workers: int = 1,
              initial: ChainState | None = None, label_streams=None, progress=None) -> PosteriorChain:
    """Run one chain and return its thinned post burn-in draws.

    Parameters
    ----------
    partition : CohortPartition, optional
        Fit the cohort model with these DOB intervals; ``None`` fits the basic
        model.
    n_workers : int
        Threads used for the z and g blocks.  Does not change the output.
    initial : ChainState, optional
        Starting state; by default :func:`initial_state` is used.
    label_streams : sequence of int, optional
        Random-stream slot used by each profile label (identity by default).
    progress : callable, optional
        Called with a dict every ``config.progress_every`` iterations.
    """
    if priors.mu0 != 0 or priors.mu1 != 0:
        raise ValueError("the trajectory update assumes zero prior means (mu0 = mu1 = 0)")
    if n_profiles < 1:
        raise ValueError("need at least one profile")
    K, J, N = n_profiles, data.n_items, data.n_individuals
    cohort = partition is not None
    if cohort:
        if data.dob is None or np.any(np.isnan(data.dob)):
            raise ValueError("the cohort model needs a date of birth for every individual")
        cohort_of = np.atleast_1d(partition.index_of(data.dob)).astype(np.int64) if N else np.zeros(0, np.int64)
        C = partition.n_cohorts
    else:
        cohort_of = np.zeros(N, dtype=np.int64)
        C = 1
    cohort_sizes = np.bincount(cohort_of, minlength=C)

    state = initial.copy() if initial is not None else initial_state(
        data, priors, config, K, C, cohort, label_streams, n_workers)
    if state.alpha.shape != (C, K) or state.params.beta0.shape != (K, J):
        raise ValueError("initial state does not match the model dimensions")
    state.cohort = cohort

    streams = CounterStreams(config.seed)
    D = config.n_draws()
    store_idx = _membership_index(N, config.store_memberships)
    out = {
        "beta0": np.empty((D, K, J)), "beta1": np.empty((D, K, J)),
        "alpha0": np.empty((D, C)), "xi": np.empty((D, C, K)),
        "log_posterior": np.empty(D), "iterations": np.empty(D, dtype=np.int64),
    }
    memberships = np.empty((D, store_idx.size, K)) if store_idx.size else None

    win_beta = np.zeros((K, J))
    win_alpha = np.zeros(C)
    tot_beta = np.zeros((K, J))
    tot_alpha = np.zeros(C)
    n_windows = 0
    d = 0
    for it in range(state.iteration + 1, config.n_iterations + 1):
        rng = SweepRNG(streams, it, label_streams)
        state.z = sample_z(state, data, rng, n_workers)
        params, acc_b, loglik = sample_beta(state, data, rng, priors)
        state.params = params
        state.g, state.log_g, counts = sample_g(state, data, rng, cohort_of, n_workers)
        state.alpha, acc_a = sample_alpha_cohort(state, rng, priors, cohort_of, config.membership_floor)
        state.iteration = it

        lp = complete_log_posterior(state, loglik, counts, cohort_of, priors)
        if not np.isfinite(lp):
            raise NumericalError(
                f"non-finite log posterior at iteration {it}",
                dump={"iteration": it, "beta0": params.beta0.tolist(), "beta1": params.beta1.tolist(),
                      "alpha": state.alpha.tolist(), "log_posterior": repr(lp)})

        win_beta += acc_b
        win_alpha += acc_a
        if it > config.burn_in:
            tot_beta += acc_b
            tot_alpha += acc_a
        if config.adapt and it <= config.burn_in and it % config.adapt_window == 0:
            n_windows += 1
            w = config.adapt_window
            state.sd_beta0 = adapt_proposals(win_beta / w, state.sd_beta0, config, n_windows)
            state.sd_beta1 = adapt_proposals(win_beta / w, state.sd_beta1, config, n_windows)
            state.sd_log_alpha = adapt_proposals(win_alpha / w, state.sd_log_alpha, config, n_windows)
            win_beta[:] = 0
            win_alpha[:] = 0
        if config.keep(it):
            a0 = ksum(state.alpha)
            out["beta0"][d] = params.beta0
            out["beta1"][d] = params.beta1
            out["alpha0"][d] = a0
            out["xi"][d] = state.alpha / a0[:, None]
            out["log_posterior"][d] = lp
            out["iterations"][d] = it
            if memberships is not None:
                memberships[d] = state.g[store_idx]
            d += 1
        if progress is not None and config.progress_every and it % config.progress_every == 0:
            progress({"event": "progress", "iteration": it, "log_posterior": lp,
                      "accept_beta": float(acc_b.mean()), "accept_alpha": float(acc_a.mean())})

    post = max(config.n_iterations - config.burn_in, 1)
    meta = {
        "model": "cohort" if cohort else "basic",
        "n_profiles": K,
        "n_items": J,
        "n_individuals": N,
        "item_labels": list(data.item_labels),
        "age_offset": data.age_offset,
        "dataset_fingerprint": data.fingerprint(),
        "sampler": _config_dict(config),
        "priors": asdict(priors),
        "partition": list(partition.boundaries) if cohort else [],
        "cohort_sizes": cohort_sizes.tolist(),
        "empty_cohorts": [int(c) for c in np.nonzero(cohort_sizes == 0)[0]],
        "acceptance": {"beta": (tot_beta / post).tolist(), "alpha": (tot_alpha / post).tolist()},
        "final_proposal_sd": {"beta0": state.sd_beta0.tolist(), "beta1": state.sd_beta1.tolist(),
                              "log_alpha": state.sd_log_alpha.tolist()},
        "membership_ids": [data.ids[i] for i in store_idx],
        "label_permutation": list(range(K)),
    }
    return PosteriorChain(memberships=memberships, meta=meta, **out)


def _config_dict(config: SamplerConfig) -> dict:
    d = asdict(config)
    d["target_accept_range"] = list(config.target_accept_range)
    return d
