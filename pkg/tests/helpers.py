"""Shared test utilities."""
import numpy as np

# (number, name, passed, detail) of every acceptance criterion run in this session
ACCEPTANCE = []


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    m = len(x) // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def make_spec(age50, slope=0.25, alpha0=0.5, xi=(0.7, 0.3), n=500, waves=(1982, 1989, 1994, 1999),
              dob=("1900-01-01", "1930-01-01"), **kwargs):
    """Generator spec with profiles given by their median onset ages (rows = profiles)."""
    from tgom.data import GeneratorSpec, to_days
    from tgom.model import DirichletParams, TrajectoryParams

    age50 = np.asarray(age50, dtype=float)
    b1 = np.broadcast_to(np.asarray(slope, dtype=float), age50.shape)
    dirichlet = kwargs.pop("dirichlet", None) or DirichletParams(alpha0, tuple(xi))
    return GeneratorSpec(TrajectoryParams(-b1 * (age50 - 80), b1), dirichlet, n,
                         tuple(to_days(f"{y}-06-01") for y in waves),
                         (to_days(dob[0]), to_days(dob[1])), **kwargs)


DESIGN_AGE50 = [[97, 95, 93, 96, 92, 94], [78, 76, 74, 77, 73, 75]]
SIX_WAVES = (1982, 1984, 1989, 1994, 1999, 2004)


def recovery_spec(n=2000, alpha0=0.328, xi=(0.824, 0.176)):
    """K=2, J=6, T=6 design: late-onset majority profile, early-onset minority profile."""
    return make_spec(DESIGN_AGE50, slope=0.25, alpha0=alpha0, xi=xi, n=n, waves=SIX_WAVES,
                     dob=("1900-01-01", "1935-01-01"))


def record(number, name, passed, detail):
    """Store and print one acceptance line; returns ``passed`` for asserting."""
    passed = bool(passed)
    ACCEPTANCE.append((number, name, passed, detail))
    print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})")
    return passed


DRIFT_XI1 = (0.5, 0.65, 0.8)
DRIFT_CUTS = ("1910-01-01", "1920-01-01")


def drift_spec(n=3000, alpha0=0.5):
    """Three profiles, three birth cohorts; the share of profile 1 grows across cohorts."""
    from tgom.data import to_days
    from tgom.model import CohortDirichletParams, CohortPartition, DirichletParams

    pops = []
    for x in DRIFT_XI1:
        rest = 1.0 - x
        pops.append(DirichletParams(alpha0, (x, 0.6 * rest, 0.4 * rest)))
    age50 = [[98, 96, 95, 97, 94, 96], [86, 84, 83, 87, 82, 85], [75, 73, 72, 76, 71, 74]]
    return make_spec(age50, slope=0.3, n=n, waves=SIX_WAVES, dob=("1898-01-01", "1932-01-01"),
                     dirichlet=CohortDirichletParams(tuple(pops)),
                     partition=CohortPartition(tuple(to_days(c) for c in DRIFT_CUTS)))


def direct_beta_conditional(b0, b1, z, data, priors):
    """log p(beta0_kj, beta1_kj | z, y) up to a constant, straight from scipy densities."""
    from scipy.special import expit
    from scipy.stats import bernoulli, norm

    K, J = b0.shape
    out = np.zeros((K, J))
    for k in range(K):
        for j in range(J):
            sel = z[:, j] == k
            p = expit(b0[k, j] + b1[k, j] * data.row_age[sel])
            out[k, j] = (bernoulli.logpmf(data.row_y[sel, j], p).sum()
                         + norm.logpdf(b0[k, j], 0, np.sqrt(priors.sigma0_sq))
                         + norm.logpdf(b1[k, j], 0, np.sqrt(priors.sigma1_sq)))
    return out


def direct_alpha_target(alpha, g, shape, rate):
    """log density of alpha = alpha0 * xi given memberships g, with alpha0 ~ Gamma and xi ~ Dirichlet(1).

    The -(K-1) log alpha0 term is the Jacobian from (alpha0, xi) to alpha.
    """
    from scipy.stats import dirichlet
    from scipy.stats import gamma as gamma_dist

    a0 = alpha.sum()
    K = alpha.size
    return (gamma_dist.logpdf(a0, shape, scale=1 / rate) - (K - 1) * np.log(a0)
            + sum(dirichlet.logpdf(gi, alpha) for gi in g))


def random_panel(rng, N, T, J):
    """Small unbalanced panel with increasing ages and random dropped waves."""
    from tgom.model import PanelDataset

    ages = -25 + np.cumsum(rng.uniform(0.5, 8, (N, T)), axis=1)
    drop = rng.random((N, T)) < 0.3
    drop[:, 0] = False
    ages[drop] = np.nan
    return PanelDataset.from_arrays(rng.integers(0, 2, (N, T, J)), ages)


def state_for(data, K, rng, C=1):
    """Random sampler state for ``data`` (trajectories, memberships, assignments, concentrations)."""
    from tgom.model import TrajectoryParams
    from tgom.sampler import ChainState

    params = TrajectoryParams(rng.normal(0, 1.5, (K, data.n_items)), rng.normal(0, 0.2, (K, data.n_items)))
    g = rng.dirichlet(np.ones(K), data.n_individuals)
    z = rng.integers(0, K, (data.n_rows, data.n_items)).astype(np.int16)
    return ChainState(params=params, g=g, log_g=np.log(g), z=z, alpha=rng.uniform(0.2, 3, (C, K)),
                      sd_beta0=np.full((K, data.n_items), 0.3), sd_beta1=np.full((K, data.n_items), 0.05),
                      sd_log_alpha=np.full(C, 0.4), cohort=C > 1)
