"""Domain types and probability functions of the trajectory grade-of-membership model.

Indices are 0-based throughout the Python API: profile ``k`` in ``0..K-1``,
item ``j`` in ``0..J-1`` and wave ``t`` in ``0..T-1``.  Output tables written
for people (CSV summaries) switch to 1-based profile labels.

Array layouts
-------------
outcomes : (N, T, J) int8, -1 where the wave is not observed
ages     : (N, T) float64, centered years (raw age minus ``age_offset``)
beta0/1  : (K, J) float64
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln, logsumexp

YEAR_DAYS = 365
DEFAULT_AGE_OFFSET = 80.0
PROB_FLOOR = 1e-12
SIMPLEX_TOL = 1e-12
BRUTE_FORCE_LIMIT = 10**6

_LOGISTIC_LO = np.finfo(float).tiny
_LOGISTIC_HI = np.nextafter(1.0, 0.0)


def ksum(x, axis=-1):
    """Sum over the profile axis in an order that does not depend on labels.

    Sorting first makes the floating point result invariant under any
    permutation of the profile labels, which keeps relabeled chains and
    label-permuted runs bit-identical.
    """
    return np.sort(x, axis=axis).sum(axis=axis)


def klogsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(ksum(np.exp(x - m), axis=axis))
    return out + np.squeeze(m, axis=axis)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _check_simplex(v, what):
    v = np.asarray(v, dtype=float)
    if v.ndim < 1 or v.shape[-1] == 0:
        raise ValueError(f"{what} must have at least one component")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError(f"{what} components must be finite and >= 0")
    if np.any(np.abs(v.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{what} must sum to 1 (within {SIMPLEX_TOL})")
    return v


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Unbalanced binary panel: N individuals, T waves, J items.

    A wave is observed for all J items or for none.  Missing waves carry
    ``-1`` outcomes and NaN ages.  ``dob`` and ``interview`` are days since
    1970-01-01 (NaN when unknown); they are optional for datasets built
    directly from ages.
    """

    outcomes: np.ndarray
    ages: np.ndarray
    observed: np.ndarray
    dob: np.ndarray | None = None
    interview: np.ndarray | None = None
    ids: tuple = ()
    item_labels: tuple = ()
    wave_labels: tuple = ()
    age_offset: float = DEFAULT_AGE_OFFSET

    def __post_init__(self):
        y = np.asarray(self.outcomes)
        if y.ndim != 3:
            raise ValueError("outcomes must have shape (N, T, J)")
        n, t, j = y.shape
        obs = np.asarray(self.observed, dtype=bool)
        ages = np.asarray(self.ages, dtype=float)
        if obs.shape != (n, t) or ages.shape != (n, t):
            raise ValueError("observed and ages must have shape (N, T)")
        y = y.astype(np.int8)
        ok = np.where(obs[:, :, None], (y == 0) | (y == 1), y == -1)
        if not ok.all():
            raise ValueError("outcomes must be 0/1 on observed waves and -1 elsewhere")
        if n and not obs.any(axis=1).all():
            raise ValueError("every individual needs at least one observed wave")
        if not np.all(np.isfinite(ages[obs])):
            raise ValueError("ages must be finite on observed waves")
        ages = np.where(obs, ages, np.nan)
        for i in range(n):
            a = ages[i, obs[i]]
            if np.any(np.diff(a) <= 0):
                raise ValueError(f"ages of individual {i} do not strictly increase across waves")
        dob = None if self.dob is None else np.asarray(self.dob, dtype=float).reshape(n)
        interview = None
        if self.interview is not None:
            interview = np.where(obs, np.asarray(self.interview, dtype=float), np.nan)
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i) for i in range(n))
        items = tuple(self.item_labels) if len(self.item_labels) else tuple(f"item{q + 1}" for q in range(j))
        waves = tuple(self.wave_labels) if len(self.wave_labels) else tuple(f"wave{q + 1}" for q in range(t))
        if len(ids) != n or len(items) != j or len(waves) != t:
            raise ValueError("label lengths do not match the outcome array")
        if len(set(ids)) != n:
            raise ValueError("individual ids must be unique")
        for name, value in [("outcomes", y), ("observed", obs), ("ages", ages), ("dob", dob),
                            ("interview", interview), ("ids", ids), ("item_labels", items),
                            ("wave_labels", waves), ("age_offset", float(self.age_offset))]:
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_arrays(cls, outcomes, ages, observed=None, **kwargs) -> "PanelDataset":
        """Build from dense arrays; ``observed`` defaults to finite ages."""
        ages = np.asarray(ages, dtype=float)
        if observed is None:
            observed = np.isfinite(ages)
        observed = np.asarray(observed, dtype=bool)
        y = np.where(observed[:, :, None], np.asarray(outcomes), -1)
        return cls(outcomes=y, ages=ages, observed=observed, **kwargs)

    @property
    def n_individuals(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_waves(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_items(self) -> int:
        return self.outcomes.shape[2]

    # Flattened view over observed (individual, wave) rows, ordered by
    # individual then wave.  All samplers work on this layout.
    @cached_property
    def row_individual(self) -> np.ndarray:
        return np.nonzero(self.observed)[0]

    @cached_property
    def row_wave(self) -> np.ndarray:
        return np.nonzero(self.observed)[1]

    @cached_property
    def row_age(self) -> np.ndarray:
        return self.ages[self.observed]

    @cached_property
    def row_y(self) -> np.ndarray:
        return self.outcomes[self.observed]

    @cached_property
    def row_start(self) -> np.ndarray:
        """Offsets into the row arrays: rows of individual i are ``row_start[i]:row_start[i+1]``."""
        counts = self.observed.sum(axis=1)
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def n_rows(self) -> int:
        return int(self.row_start[-1])

    def subset(self, index) -> "PanelDataset":
        index = np.asarray(index, dtype=np.int64)
        return PanelDataset(
            outcomes=self.outcomes[index],
            ages=self.ages[index],
            observed=self.observed[index],
            dob=None if self.dob is None else self.dob[index],
            interview=None if self.interview is None else self.interview[index],
            ids=tuple(self.ids[i] for i in index),
            item_labels=self.item_labels,
            wave_labels=self.wave_labels,
            age_offset=self.age_offset,
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.outcomes, self.observed, self.ages):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.dob is not None:
            h.update(np.ascontiguousarray(self.dob).tobytes())
        h.update("\x1f".join(self.ids + self.item_labels + self.wave_labels).encode())
        h.update(repr(self.age_offset).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class TrajectoryParams:
    """Linear-logit extreme trajectories; entries indexed ``[k, j]``."""

    beta0: np.ndarray
    beta1: np.ndarray

    def __post_init__(self):
        b0 = np.array(self.beta0, dtype=float, ndmin=2)
        b1 = np.array(self.beta1, dtype=float, ndmin=2)
        if b0.shape != b1.shape or b0.ndim != 2:
            raise ValueError("beta0 and beta1 must be matching (K, J) arrays")
        if not (np.all(np.isfinite(b0)) and np.all(np.isfinite(b1))):
            raise ValueError("trajectory parameters must be finite")
        b0.setflags(write=False)
        b1.setflags(write=False)
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta1", b1)

    @property
    def n_profiles(self) -> int:
        return self.beta0.shape[0]

    @property
    def n_items(self) -> int:
        return self.beta0.shape[1]

    def linear_predictor(self, ages) -> np.ndarray:
        """Logit of every extreme trajectory at ``ages``: shape ``ages.shape + (J, K)``."""
        a = np.asarray(ages, dtype=float)[..., None, None]
        return self.beta0.T + self.beta1.T * a


@dataclass(frozen=True, eq=False)
class MembershipVector:
    g: np.ndarray

    def __post_init__(self):
        g = _check_simplex(self.g, "membership vector")
        if g.ndim != 1:
            raise ValueError("membership vector must be one-dimensional")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)


@dataclass(frozen=True, eq=False)
class LatentAssignments:
    """Profile labels per observed cell, dense ``(N, T, J)`` with -1 elsewhere."""

    z: np.ndarray
    n_profiles: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int16)
        object.__setattr__(self, "z", z)

    def validate(self, data: PanelDataset):
        obs = np.broadcast_to(data.observed[:, :, None], self.z.shape)
        if self.z.shape != data.outcomes.shape:
            raise ValueError("assignment array shape differs from the dataset")
        if np.any(self.z[~obs] != -1):
            raise ValueError("assignments defined on unobserved cells")
        zo = self.z[obs]
        if np.any((zo < 0) | (zo >= self.n_profiles)):
            raise ValueError("assignment outside 0..K-1 on an observed cell")

    @classmethod
    def from_rows(cls, rows_z, data: PanelDataset, n_profiles: int) -> "LatentAssignments":
        z = np.full(data.outcomes.shape, -1, dtype=np.int16)
        z[data.observed] = rows_z
        return cls(z, n_profiles)


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet population distribution in (concentration, mean) form."""

    alpha0: float
    xi: tuple

    def __post_init__(self):
        a0 = float(self.alpha0)
        if not (np.isfinite(a0) and a0 > 0):
            raise ValueError("alpha0 must be positive")
        xi = _check_simplex(self.xi, "xi")
        if xi.ndim != 1 or np.any(xi <= 0):
            raise ValueError("xi components must be strictly positive")
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "xi", tuple(float(v) for v in xi))

    @property
    def alpha(self) -> np.ndarray:
        return self.alpha0 * np.asarray(self.xi)

    @property
    def n_profiles(self) -> int:
        return len(self.xi)

    @classmethod
    def from_alpha(cls, alpha) -> "DirichletParams":
        alpha = np.asarray(alpha, dtype=float)
        a0 = ksum(alpha)
        return cls(a0, tuple(alpha / a0))


@dataclass(frozen=True)
class CohortPartition:
    """Contiguous date-of-birth intervals ``[lo, hi)`` split at ``boundaries``.

    With C-1 cut points there are C cohorts; the first is unbounded below and
    the last unbounded above.  A DOB equal to a cut point belongs to the
    cohort that starts there.
    """

    boundaries: tuple = ()

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if not all(np.isfinite(b)) or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("cohort cut points must be finite and strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_cohorts(self) -> int:
        return len(self.boundaries) + 1

    def index_of(self, dob):
        """Cohort index (0-based) of each date of birth."""
        dob = np.asarray(dob, dtype=float)
        if np.any(np.isnan(dob)):
            raise ValueError("date of birth missing")
        idx = np.searchsorted(np.asarray(self.boundaries), dob, side="right")
        return int(idx) if idx.ndim == 0 else idx.astype(np.int64)


@dataclass(frozen=True)
class CohortDirichletParams:
    per_cohort: tuple

    def __post_init__(self):
        pc = tuple(self.per_cohort)
        if not pc or not all(isinstance(p, DirichletParams) for p in pc):
            raise ValueError("per_cohort must be a non-empty sequence of DirichletParams")
        if len({p.n_profiles for p in pc}) != 1:
            raise ValueError("all cohorts need the same number of profiles")
        object.__setattr__(self, "per_cohort", pc)

    @property
    def n_cohorts(self) -> int:
        return len(self.per_cohort)

    @property
    def n_profiles(self) -> int:
        return self.per_cohort[0].n_profiles


@dataclass(frozen=True)
class Priors:
    """Hyperparameters.  Gamma laws use the shape / inverse-scale (rate) form."""

    a_alpha: float = 1.0
    b_alpha: float = 5.0
    mu0: float = 0.0
    sigma0_sq: float = 100.0
    mu1: float = 0.0
    sigma1_sq: float = 100.0
    cohort_tau: float | None = None
    cohort_eta: float | None = None

    def __post_init__(self):
        if self.cohort_tau is None:
            object.__setattr__(self, "cohort_tau", self.a_alpha)
        if self.cohort_eta is None:
            object.__setattr__(self, "cohort_eta", self.b_alpha)
        for name in ("a_alpha", "b_alpha", "sigma0_sq", "sigma1_sq", "cohort_tau", "cohort_eta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not (np.isfinite(self.mu0) and np.isfinite(self.mu1)):
            raise ValueError("prior means must be finite")


# ---------------------------------------------------------------------------
# Probability functions
# ---------------------------------------------------------------------------


def logistic(x):
    """Inverse logit, kept strictly inside (0, 1)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("logistic is defined for finite arguments only")
    out = np.clip(expit(x), _LOGISTIC_LO, _LOGISTIC_HI)
    return float(out) if out.ndim == 0 else out


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("logit is defined on (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _check_index(value, size, what):
    if not (0 <= value < size):
        raise IndexError(f"{what} index {value} out of range 0..{size - 1}")


def extreme_trajectory_prob(params: TrajectoryParams, k: int, j: int, age):
    _check_index(k, params.n_profiles, "profile")
    _check_index(j, params.n_items, "item")
    return logistic(params.beta0[k, j] + params.beta1[k, j] * np.asarray(age, dtype=float))


def _as_membership(g, n_profiles=None) -> np.ndarray:
    if isinstance(g, MembershipVector):
        g = g.g
    else:
        g = MembershipVector(g).g
    if n_profiles is not None and g.shape[0] != n_profiles:
        raise ValueError(f"membership vector has {g.shape[0]} components, model has {n_profiles}")
    return g


def individual_trajectory_prob(g, params: TrajectoryParams, j: int, age):
    """Convex combination of the extreme trajectories of item ``j``."""
    g = _as_membership(g, params.n_profiles)
    _check_index(j, params.n_items, "item")
    a = np.asarray(age, dtype=float)
    lam = logistic(params.beta0[:, j] + params.beta1[:, j] * a[..., None])
    out = ksum(g * lam)
    return float(out) if np.ndim(out) == 0 else out


def _clamped(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _individual_cells(i, data: PanelDataset):
    if not (0 <= i < data.n_individuals):
        raise IndexError(f"individual {i} not in dataset")
    s, e = data.row_start[i], data.row_start[i + 1]
    return data.row_age[s:e], data.row_y[s:e]


def cell_log_bernoulli(params: TrajectoryParams, ages, y) -> np.ndarray:
    """log Bernoulli(y | lambda_jk(age)) for every row, item and profile: (rows, J, K)."""
    lam = _clamped(expit(params.linear_predictor(ages)))
    y = np.asarray(y)[..., None]
    return np.where(y == 1, np.log(lam), np.log1p(-lam))


def individual_log_likelihood(i: int, g, params: TrajectoryParams, data: PanelDataset) -> float:
    """Mixture log-likelihood of individual ``i`` summed over observed cells."""
    g = _as_membership(g, params.n_profiles)
    ages, y = _individual_cells(i, data)
    if ages.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        logg = np.log(g)
    terms = logsumexp(logg + cell_log_bernoulli(params, ages, y), axis=-1)
    return float(terms.sum())


def augmented_log_likelihood(i: int, g, z, params: TrajectoryParams, data: PanelDataset) -> float:
    """Complete-data log-likelihood given assignments ``z`` of shape (T, J)."""
    g = _as_membership(g, params.n_profiles)
    ages, y = _individual_cells(i, data)
    z = np.asarray(z)
    if z.shape != (data.n_waves, data.n_items):
        raise ValueError("z must have shape (T, J) for one individual")
    zo = z[data.observed[i]]
    if np.any((zo < 0) | (zo >= params.n_profiles)):
        raise ValueError("assignment outside 0..K-1")
    if ages.size == 0:
        return 0.0
    lb = np.take_along_axis(cell_log_bernoulli(params, ages, y), zo[..., None].astype(np.intp), axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return float(np.log(g)[zo].sum() + lb.sum())


def brute_force_marginal(i: int, g, params: TrajectoryParams, data: PanelDataset) -> float:
    """Sum the augmented likelihood over every assignment of the individual's cells."""
    g = _as_membership(g, params.n_profiles)
    K = params.n_profiles
    obs = data.observed[i]
    n_cells = int(obs.sum()) * data.n_items
    if K**n_cells > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{K}^{n_cells} assignments exceed the brute-force limit")
    cells = [(t, j) for t in np.nonzero(obs)[0] for j in range(data.n_items)]
    z = np.full((data.n_waves, data.n_items), -1)
    terms = []
    for combo in itertools.product(range(K), repeat=n_cells):
        for (t, j), k in zip(cells, combo):
            z[t, j] = k
        terms.append(augmented_log_likelihood(i, g, z, params, data))
    return float(logsumexp(terms))


def alpha_of_dob(cohort_params: CohortDirichletParams, partition: CohortPartition, dob) -> DirichletParams:
    if cohort_params.n_cohorts != partition.n_cohorts:
        raise ValueError("partition and cohort parameters disagree on the number of cohorts")
    return cohort_params.per_cohort[partition.index_of(dob)]


def _log_gamma_density(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def _log_normal_density(x, mean, var):
    return -0.5 * np.log(2.0 * np.pi * var) - (x - mean) ** 2 / (2.0 * var)


def log_prior(params: TrajectoryParams, dirichlet, priors: Priors) -> float:
    """Joint log prior density of trajectories and the population distribution.

    The population term is taken with respect to (alpha0, xi): a Gamma law on
    the concentration and a flat Dirichlet on the mean.  Cohort parameters
    contribute one independent such term per cohort.
    """
    if isinstance(dirichlet, CohortDirichletParams):
        pop = [(p, priors.cohort_tau, priors.cohort_eta) for p in dirichlet.per_cohort]
    else:
        pop = [(dirichlet, priors.a_alpha, priors.b_alpha)]
    total = 0.0
    for p, shape, rate in pop:
        total += _log_gamma_density(p.alpha0, shape, rate) + gammaln(p.n_profiles)
    total += _log_normal_density(params.beta0, priors.mu0, priors.sigma0_sq).sum()
    total += _log_normal_density(params.beta1, priors.mu1, priors.sigma1_sq).sum()
    return float(total)


def as_dirichlet_list(dirichlet) -> list:
    if isinstance(dirichlet, CohortDirichletParams):
        return list(dirichlet.per_cohort)
    return [dirichlet]


__all__: Sequence[str] = [
    "PanelDataset", "TrajectoryParams", "MembershipVector", "LatentAssignments", "DirichletParams",
    "CohortPartition", "CohortDirichletParams", "Priors", "logistic", "logit", "softplus",
    "extreme_trajectory_prob", "individual_trajectory_prob", "individual_log_likelihood",
    "augmented_log_likelihood", "brute_force_marginal", "alpha_of_dob", "log_prior",
    "cell_log_bernoulli", "ksum", "klogsumexp", "YEAR_DAYS", "DEFAULT_AGE_OFFSET", "PROB_FLOOR",
]
