import dataclasses

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from tgom.chain import write_chain
from tgom.data import GeneratorSpec, generate_dataset, to_days
from tgom.model import CohortPartition, DirichletParams, PanelDataset, Priors, TrajectoryParams
from tgom.rng import CounterStreams
from tgom.sampler import (
    ChainState,
    SamplerConfig,
    SweepRNG,
    adapt_proposals,
    alpha_log_ratio,
    beta_log_ratio,
    initial_state,
    run_chain,
    sample_alpha,
    sample_alpha_cohort,
    sample_g,
    sample_z,
    z_log_weights,
)

from helpers import batch_means_se, direct_alpha_target, direct_beta_conditional, random_panel, state_for


# --- trajectory update ---------------------------------------------------------------


def test_beta_ratio_identity():
    rng = np.random.default_rng(0)
    priors = Priors(sigma0_sq=4.0, sigma1_sq=0.5)
    worst = 0.0
    for _ in range(40):
        K, J = rng.integers(1, 4), rng.integers(1, 4)
        data = random_panel(rng, int(rng.integers(1, 8)), int(rng.integers(1, 4)), J)
        st = state_for(data, K, rng)
        p0 = st.params.beta0 + rng.normal(0, 0.5, (K, J))
        p1 = st.params.beta1 + rng.normal(0, 0.1, (K, J))
        log_r, _, _ = beta_log_ratio(st.params.beta0, st.params.beta1, p0, p1, st.z, data, priors)
        want = direct_beta_conditional(p0, p1, st.z, data, priors) - \
            direct_beta_conditional(st.params.beta0, st.params.beta1, st.z, data, priors)
        worst = max(worst, np.abs(log_r - want).max())
    assert worst < 1e-10


def test_beta_ratio_identity_move_and_empty_block():
    rng = np.random.default_rng(1)
    data = random_panel(rng, 4, 2, 2)
    st = state_for(data, 2, rng)
    b0, b1 = st.params.beta0, st.params.beta1
    log_r, _, _ = beta_log_ratio(b0, b1, b0, b1, st.z, data, Priors())
    assert np.all(log_r == 0)
    z = np.zeros_like(st.z)                       # profile 2 owns no cells
    p0, p1 = b0 + 0.3, b1 - 0.02
    log_r, _, _ = beta_log_ratio(b0, b1, p0, p1, z, data, Priors())
    prior_only = (norm.logpdf(p0[1], 0, 10) - norm.logpdf(b0[1], 0, 10)
                  + norm.logpdf(p1[1], 0, 10) - norm.logpdf(b1[1], 0, 10))
    np.testing.assert_allclose(log_r[1], prior_only, atol=1e-12)


# --- concentration update ------------------------------------------------------------------


def test_alpha_ratio_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(40):
        K = int(rng.integers(2, 5))
        n = int(rng.integers(0, 6))
        g = rng.dirichlet(np.ones(K) * 2, n)
        alpha = rng.uniform(0.2, 4, K)
        prop = alpha * np.exp(rng.normal(0, 0.5, K))
        shape, rate = rng.uniform(0.5, 3), rng.uniform(0.5, 6)
        s = np.log(g).sum(axis=0) if n else np.zeros(K)
        got = alpha_log_ratio(alpha, prop, n, s, shape, rate)
        want = (direct_alpha_target(prop, g, shape, rate) - direct_alpha_target(alpha, g, shape, rate)
                + np.log(prop).sum() - np.log(alpha).sum())
        worst = max(worst, abs(got - want))
    assert worst < 1e-10
    assert alpha_log_ratio(alpha, alpha, n, s, shape, rate) == 0.0


def empty_state(K, C=1, alpha=None):
    return ChainState(params=TrajectoryParams(np.zeros((K, 1)), np.zeros((K, 1))),
                      g=np.zeros((0, K)), log_g=np.zeros((0, K)), z=np.zeros((0, 1), np.int16),
                      alpha=np.full((C, K), 0.5) if alpha is None else alpha,
                      sd_log_alpha=np.full(C, 0.9), cohort=C > 1)


def test_alpha_prior_recovery():
    n_draws = 120_000
    st = empty_state(2)
    streams = CounterStreams(11)
    a0 = np.empty(n_draws)
    xi = np.empty(n_draws)
    for it in range(n_draws):
        st.alpha, _ = sample_alpha(st, SweepRNG(streams, it), Priors())
        a0[it] = st.alpha.sum()
        xi[it] = st.alpha[0, 0] / a0[it]
    a0, xi = a0[2000:], xi[2000:]
    assert abs(a0.mean() - 0.2) < 3 * batch_means_se(a0)               # Gamma(1, 5)
    assert abs((a0**2).mean() - 0.08) < 3 * batch_means_se(a0**2)
    assert abs(xi.mean() - 0.5) < 3 * batch_means_se(xi)                # Dirichlet(1)


def test_empty_cohort_targets_cohort_prior():
    priors = Priors(cohort_tau=3.0, cohort_eta=2.0)
    st = empty_state(2, C=2)
    streams = CounterStreams(5)
    cohort_of = np.zeros(0, np.int64)
    draws = np.empty((60_000, 2))
    for it in range(len(draws)):
        st.alpha, _ = sample_alpha_cohort(st, SweepRNG(streams, it), priors, cohort_of)
        draws[it] = st.alpha.sum(axis=1)
    draws = draws[2000:]
    for c in range(2):
        assert abs(draws[:, c].mean() - 1.5) < 3 * batch_means_se(draws[:, c])


def test_single_cohort_equals_basic():
    rng = np.random.default_rng(4)
    data = random_panel(rng, 30, 3, 2)
    data = dataclasses.replace(data, dob=np.zeros(30))
    cfg = SamplerConfig(n_iterations=60, burn_in=20, thin_keep_fraction=1.0, seed=9)
    a = run_chain(data, Priors(), cfg, 2)
    b = run_chain(data, Priors(), cfg, 2, CohortPartition(()))
    for name in ("beta0", "beta1", "alpha0", "xi", "log_posterior"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


# --- memberships and assignments ------------------------------------------------------------


def test_g_conjugacy_moments():
    N = 100_000
    # one wave of four items; three cells assigned to profile 1, one to profile 2
    data = PanelDataset.from_arrays(np.zeros((N, 1, 4), int), np.zeros((N, 1)))
    z = np.tile(np.array([[0, 0, 0, 1]], np.int16), (N, 1))
    st = ChainState(params=TrajectoryParams(np.zeros((2, 4)), np.zeros((2, 4))),
                    g=np.full((N, 2), 0.5), log_g=np.log(np.full((N, 2), 0.5)), z=z, alpha=np.ones((1, 2)))
    g, log_g, counts = sample_g(st, data, SweepRNG(CounterStreams(3), 1))
    assert np.all(counts == [3, 1])
    x = g[:, 0]
    mean, var = 4 / 6, 4 * 2 / (36 * 7)            # Beta(4, 2)
    assert abs(x.mean() - mean) < 3 * x.std() / np.sqrt(N)
    sq = (x - mean) ** 2
    assert abs(sq.mean() - var) < 3 * sq.std() / np.sqrt(N)
    np.testing.assert_allclose(g.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_g), g, rtol=1e-12)


def test_g_single_cell_posterior():
    # one cell per individual, assigned to profile 1: Dirichlet(1, 1, 1) becomes Dirichlet(2, 1, 1)
    N = 50_000
    data = PanelDataset.from_arrays(np.zeros((N, 1, 1), int), np.zeros((N, 1)))
    st = ChainState(params=TrajectoryParams(np.zeros((3, 1)), np.zeros((3, 1))),
                    g=np.full((N, 3), 1 / 3), log_g=np.log(np.full((N, 3), 1 / 3)),
                    z=np.zeros((N, 1), np.int16), alpha=np.ones((1, 3)))
    g, _, _ = sample_g(st, data, SweepRNG(CounterStreams(8), 1))
    assert abs(g[:, 0].mean() - 0.5) < 3 * g[:, 0].std() / np.sqrt(N)
    assert abs(g[:, 2].mean() - 0.25) < 3 * g[:, 2].std() / np.sqrt(N)


def test_z_weights_hand_example():
    p = TrajectoryParams([[np.log(9.0)], [-np.log(9.0)]], [[0.0], [0.0]])
    lw = z_log_weights(p, np.log([[0.5, 0.5]]), np.array([0.0]), np.array([[1]]))
    w = np.exp(lw - lw.max())
    np.testing.assert_allclose(w[0, 0] / w[0, 0].sum(), [0.9, 0.1], atol=1e-14)


def test_z_k1_and_zero_weight():
    rng = np.random.default_rng(5)
    data = random_panel(rng, 40, 3, 2)
    st = state_for(data, 1, rng)
    assert np.all(sample_z(st, data, SweepRNG(CounterStreams(1), 1)) == 0)
    st = state_for(data, 2, rng)
    with np.errstate(divide="ignore"):
        st.log_g = np.log(np.column_stack([np.ones(40), np.zeros(40)]))
    for it in range(20):
        assert np.all(sample_z(st, data, SweepRNG(CounterStreams(1), it)) == 0)


def test_z_frequencies_match_conditional():
    N = 40_000
    data = PanelDataset.from_arrays(np.ones((N, 1, 1), int), np.zeros((N, 1)))
    p = TrajectoryParams([[0.4], [-1.2], [2.0]], [[0.0], [0.0], [0.0]])
    g = np.array([0.2, 0.5, 0.3])
    st = ChainState(params=p, g=np.tile(g, (N, 1)), log_g=np.log(np.tile(g, (N, 1))),
                    z=np.zeros((N, 1), np.int16), alpha=np.ones((1, 3)))
    z = sample_z(st, data, SweepRNG(CounterStreams(2), 1))
    want = g * expit(np.array([0.4, -1.2, 2.0]))
    want /= want.sum()
    freq = np.bincount(z.ravel(), minlength=3) / N
    assert np.all(np.abs(freq - want) < 3 * np.sqrt(want * (1 - want) / N))


# --- scheduling -------------------------------------------------------------------------------


def test_adapt_directions():
    cfg = SamplerConfig()
    sd = np.array([0.1, 0.1, 0.1])
    new = adapt_proposals([1.0, 0.0, 0.3], sd, cfg, 1)
    assert new[0] > 0.1 and new[1] < 0.1 and new[2] == 0.1


@pytest.mark.parametrize("n,b,f,want", [(11, 10, 1.0, 1), (10, 9, 0.2, 0), (100, 20, 0.2, 16),
                                        (103, 0, 0.2, 20), (50, 10, 0.3, 12)])
def test_thinning_counts(n, b, f, want):
    cfg = SamplerConfig(n_iterations=n, burn_in=b, thin_keep_fraction=f)
    kept = [it for it in range(1, n + 1) if cfg.keep(it)]
    assert len(kept) == cfg.n_draws() == want
    if f == 0.2 and kept:
        assert all((it - b) % 5 == 0 for it in kept)


def test_config_problems_listed_together():
    with pytest.raises(ValueError) as exc:
        SamplerConfig(n_iterations=10, burn_in=10, proposal_sd_beta0=0.0, thin_keep_fraction=2.0)
    msg = str(exc.value)
    assert "burn_in" in msg and "proposal_sd_beta0" in msg and "thin_keep_fraction" in msg


def test_rejects_nonzero_prior_means():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        run_chain(random_panel(rng, 5, 2, 1), Priors(mu0=1.0), SamplerConfig(n_iterations=5, burn_in=1), 2)


def small_spec(N):
    age50 = np.array([[95, 92, 97], [76, 74, 78.0]])
    b1 = np.full((2, 3), 0.25)
    return GeneratorSpec(TrajectoryParams(-b1 * (age50 - 80), b1), DirichletParams(0.5, (0.7, 0.3)), N,
                         tuple(to_days(f"{y}-06-01") for y in (1982, 1989, 1994, 1999)),
                         (to_days("1900-01-01"), to_days("1930-01-01")))


def test_determinism_across_threads(tmp_path):
    data, _ = generate_dataset(small_spec(1300), 1)            # three chunks of individuals
    cfg = SamplerConfig(n_iterations=40, burn_in=10, thin_keep_fraction=0.5, seed=3, store_memberships=5)
    files = []
    for w in (1, 2, 4):
        ch = run_chain(data, Priors(), cfg, 2, n_workers=w)
        files.append(tmp_path / f"c{w}.jsonl")
        write_chain(ch, files[-1])
    assert files[0].read_bytes() == files[1].read_bytes() == files[2].read_bytes()


def test_label_permutation_equivariance():
    data, _ = generate_dataset(small_spec(300), 2)
    cfg = SamplerConfig(n_iterations=30, burn_in=5, thin_keep_fraction=1.0, seed=5)
    K = 3
    base = initial_state(data, Priors(), cfg, K)
    perm = np.array([2, 0, 1])                      # new label k holds old label perm[k]
    inv = np.argsort(perm)
    moved = base.copy()
    moved.params = TrajectoryParams(base.params.beta0[perm], base.params.beta1[perm])
    moved.g, moved.log_g = base.g[:, perm], base.log_g[:, perm]
    moved.z = inv[base.z].astype(np.int16)
    moved.alpha = base.alpha[:, perm]
    a = run_chain(data, Priors(), cfg, K, initial=base)
    b = run_chain(data, Priors(), cfg, K, initial=moved, label_streams=tuple(perm))
    assert np.array_equal(a.beta0[:, perm], b.beta0)
    assert np.array_equal(a.beta1[:, perm], b.beta1)
    assert np.array_equal(a.xi[..., perm], b.xi)
    assert np.array_equal(a.alpha0, b.alpha0)
    np.testing.assert_allclose(a.log_posterior, b.log_posterior, rtol=1e-13)


def test_prior_stationarity_on_empty_data():
    empty = PanelDataset.from_arrays(np.zeros((0, 1, 1), int), np.zeros((0, 1)))
    cfg = SamplerConfig(n_iterations=60_000, burn_in=5_000, thin_keep_fraction=1.0, seed=1,
                        proposal_sd_beta0=5.0, proposal_sd_beta1=5.0, proposal_sd_log_alpha=1.0)
    ch = run_chain(empty, Priors(), cfg, 2)
    a0 = ch.alpha0[:, 0]
    assert abs(a0.mean() - 0.2) < 3 * batch_means_se(a0)
    assert abs(ch.xi[:, 0, 0].mean() - 0.5) < 3 * batch_means_se(ch.xi[:, 0, 0])
    b = ch.beta0[:, 0, 0]
    assert abs(b.mean()) < 3 * batch_means_se(b)
    assert abs((b**2).mean() - 100) < 3 * batch_means_se(b**2)


def test_chain_states_satisfy_invariants():
    data, _ = generate_dataset(small_spec(200), 3)
    ch = run_chain(data, Priors(), SamplerConfig(n_iterations=50, burn_in=10, thin_keep_fraction=1.0,
                                                  store_memberships=-1), 2)
    assert ch.n_draws == 40
    assert np.all(ch.alpha0 > 0) and np.all(ch.xi > 0)
    np.testing.assert_allclose(ch.xi.sum(axis=-1), 1, atol=1e-12)
    np.testing.assert_allclose(ch.memberships.sum(axis=-1), 1, atol=1e-12)
    assert np.all(np.diff(ch.iterations) == 1)
    for key in ("beta", "alpha"):
        rates = np.asarray(ch.meta["acceptance"][key])
        assert np.all((rates >= 0) & (rates <= 1))
