"""Out-of-sample predictive accuracy.

For a held-out individual i with observed cells (j, t), the match
probability of a cell under membership vector omega is

    m_jt(omega) = sum_k omega_k * Bern(y_ijt | lambda_jk(age_it))

with lambda the posterior-mean trajectory probability (averaged over the
retained draws).  Memberships are integrated out by Monte Carlo: for every
retained draw d, M vectors omega ~ Dirichlet(alpha_d) are drawn (cohort
specific for the cohort model).  The four accuracy levels average, over
all (d, omega),

    phi_ijt : m_jt            phi_ij : prod_t m_jt
    phi_it  : prod_j m_jt     phi_i  : prod_{j,t} m_jt

so the only dependence across cells comes from the shared membership
vector.  With one profile omega = 1 and phi_i is exactly the product of the
phi_ijt.

The independence baseline fits one logistic regression per item on a cubic
polynomial in age and multiplies its cell probabilities.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from . import rng as streams_mod
from .chain import PosteriorChain
from .model import PROB_FLOOR, CohortPartition, PanelDataset, klogsumexp

log = logging.getLogger(__name__)

CHUNK = 512
BASELINE_LABEL = "independence baseline (parametric)"
LEVELS = ("phi_ijt", "phi_ij", "phi_it", "phi_i")


class _Accumulator:
    """Neumaier-compensated running sum, elementwise."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, x):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def total(self):
        return self.s + self.c


@dataclass
class PhiResult:
    """Per-individual accuracy of one model on one held-out set.

    ``phi_ijt`` and ``phi_it`` follow the dataset's observed-row order
    (``data.row_individual``); ``phi_ij`` and ``phi_i`` are per individual and
    NaN for individuals without observed waves.
    """

    phi_ijt: np.ndarray     # (n_rows, J)
    phi_ij: np.ndarray      # (N, J)
    phi_it: np.ndarray      # (n_rows,)
    phi_i: np.ndarray       # (N,)
    settings: dict = field(default_factory=dict)

    def means(self) -> dict:
        return {"phi_ijt": float(self.phi_ijt.mean()) if self.phi_ijt.size else np.nan,
                "phi_ij": float(np.nanmean(self.phi_ij)) if np.isfinite(self.phi_ij).any() else np.nan,
                "phi_it": float(self.phi_it.mean()) if self.phi_it.size else np.nan,
                "phi_i": float(np.nanmean(self.phi_i)) if np.isfinite(self.phi_i).any() else np.nan}


def _draw_index(n_draws, max_draws):
    if max_draws is None or max_draws >= n_draws:
        return np.arange(n_draws)
    if max_draws < 1:
        raise ValueError("max_draws must be >= 1")
    return np.unique(np.round(np.linspace(0, n_draws - 1, max_draws)).astype(np.int64))


def mean_cell_probabilities(chain: PosteriorChain, ages, draws=None) -> np.ndarray:
    """Posterior-mean lambda_jk at centred ages: shape ages.shape + (J, K)."""
    ages = np.asarray(ages, dtype=float)
    draws = np.arange(chain.n_draws) if draws is None else draws
    acc = _Accumulator(ages.shape + (chain.n_items, chain.n_profiles))
    a = ages[..., None, None]
    for d in draws:
        acc.add(expit(chain.beta0[d].T + chain.beta1[d].T * a))
    return acc.total / len(draws)


def _cohort_index(heldout: PanelDataset, chain: PosteriorChain):
    if not chain.is_cohort:
        return np.zeros(heldout.n_individuals, dtype=np.int64)
    if heldout.dob is None or np.isnan(heldout.dob).any():
        missing = [] if heldout.dob is None else [heldout.ids[i] for i in np.nonzero(np.isnan(heldout.dob))[0]]
        raise ValueError(f"held-out individuals without date of birth under the cohort model: {missing[:5]}")
    part = CohortPartition(tuple(chain.meta.get("partition") or ()))
    return np.atleast_1d(part.index_of(heldout.dob)).astype(np.int64)


def _log_dirichlet(gen, alpha, size):
    """log Dirichlet draws, (size, K) per row of alpha (n, K) -> (n, size, K)."""
    a = np.broadcast_to(alpha[:, None, :], (alpha.shape[0], size, alpha.shape[1]))
    lx = np.log(gen.standard_gamma(a + 1.0)) + np.log(gen.random(a.shape) + 2.0**-54) / a
    return lx - klogsumexp(lx)[..., None]


def phi_quantities(heldout: PanelDataset, chain: PosteriorChain, membership_draws: int = 20, seed: int = 0,
                   max_draws: int | None = None, n_workers: int = 1) -> PhiResult:
    """Accuracy of a fitted chain on individuals it was not fitted to.

    Parameters
    ----------
    heldout : PanelDataset
    chain : PosteriorChain
    membership_draws : int
        M, membership vectors drawn per retained draw and individual.
    seed : int
        Seed of the membership draws.
    max_draws : int, optional
        Use this many evenly spaced retained draws instead of all of them.
    n_workers : int
        Threads; results do not depend on it.
    """
    if membership_draws < 1:
        raise ValueError("membership_draws must be >= 1")
    if chain.n_draws == 0:
        raise ValueError("empty chain")
    if heldout.n_items != chain.n_items:
        raise ValueError(f"held-out data has {heldout.n_items} items, chain has {chain.n_items}")
    M = int(membership_draws)
    N, J, K = heldout.n_individuals, chain.n_items, chain.n_profiles
    draws = _draw_index(chain.n_draws, max_draws)
    cohort_of = _cohort_index(heldout, chain)
    streams = streams_mod.CounterStreams(seed)

    lam = np.clip(mean_cell_probabilities(chain, heldout.row_age, draws), PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = heldout.row_y.astype(bool)
    bern = np.where(y[..., None], lam, 1.0 - lam)                     # (rows, J, K)
    alpha = chain.alpha0[:, :, None] * chain.xi                        # (D, C, K)
    start = heldout.row_start

    def work(c):
        a, b = c * CHUNK, min((c + 1) * CHUNK, N)
        r0, r1 = start[a], start[b]
        rows_ind = heldout.row_individual[r0:r1] - a
        br = bern[r0:r1]
        seg = start[a:b] - r0
        has = start[a + 1:b + 1] > start[a:b]
        acc = {name: _Accumulator(shape) for name, shape in
               (("phi_ijt", (r1 - r0, J)), ("phi_ij", (b - a, J)), ("phi_it", (r1 - r0,)), ("phi_i", (b - a,)))}
        for d in draws:
            if K == 1:
                m = np.broadcast_to(br[:, None, :, 0], (r1 - r0, M, J))
            else:
                gen = streams.chunk_generator(streams_mod.PREDICT, int(d), c)
                omega = np.exp(_log_dirichlet(gen, alpha[d][cohort_of[a:b]], M))     # (n, M, K)
                m = np.einsum("rmk,rjk->rmj", omega[rows_ind], br)
            lm = np.log(m)
            acc["phi_ijt"].add(m.sum(axis=1))
            acc["phi_it"].add(np.exp(lm.sum(axis=2)).sum(axis=1))
            if r1 > r0:
                idx = seg[has]
                per_ij = np.zeros((b - a, M, J))
                per_ij[has] = np.add.reduceat(lm, idx, axis=0)
                acc["phi_ij"].add(np.exp(per_ij).sum(axis=1))
                acc["phi_i"].add(np.exp(per_ij.sum(axis=2)).sum(axis=1))
        n = len(draws) * M
        out = {k: v.total / n for k, v in acc.items()}
        out["phi_ij"][~has] = np.nan
        out["phi_i"][~has] = np.nan
        return out

    n_chunks = -(-N // CHUNK)
    if n_workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            parts = list(ex.map(work, range(n_chunks)))
    else:
        parts = [work(c) for c in range(n_chunks)]
    if not parts:
        empty = {"phi_ijt": np.zeros((0, J)), "phi_ij": np.zeros((0, J)), "phi_it": np.zeros(0), "phi_i": np.zeros(0)}
        parts = [empty]
    res = {k: np.concatenate([p[k] for p in parts]) for k in LEVELS}
    settings = {"membership_draws": M, "n_draws_used": int(len(draws)), "n_draws_available": chain.n_draws,
                "seed": int(seed), "cell_probabilities": "posterior mean over retained draws"}
    return PhiResult(settings=settings, **res)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


def kfold_split(n_individuals: int, k: int = 4, seed: int = 0) -> np.ndarray:
    """Fold index (0..k-1) of each individual; fold sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n_individuals < k:
        raise ValueError(f"cannot split {n_individuals} individuals into {k} folds")
    perm = streams_mod.CounterStreams(seed).generator(streams_mod.FOLDS).permutation(n_individuals)
    folds = np.empty(n_individuals, dtype=np.int64)
    folds[perm] = np.arange(n_individuals) % k
    return folds


def fold_fingerprint(folds) -> str:
    return hashlib.sha256(np.asarray(folds, dtype=np.int64).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# independence baseline
# ---------------------------------------------------------------------------


def cubic_basis(ages):
    a = np.asarray(ages, dtype=float) / 10.0
    return np.stack([np.ones_like(a), a, a * a, a * a * a], axis=-1)


def fit_logistic_irls(X, y, tol: float = 1e-8, max_iter: int = 100, ridge: float = 0.0):
    """Maximum-likelihood (optionally ridge-penalised) logistic regression.

    Newton / IRLS iterations stop when the largest coefficient change is
    below ``tol``.  Returns ``(coef, converged, n_iter)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    pen = ridge * np.eye(X.shape[1])
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        w = p * (1.0 - p)
        H = X.T @ (X * w[:, None]) + pen
        grad = X.T @ (y - p) - ridge * beta
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return beta, False, it
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            return beta, False, it
        if np.max(np.abs(step)) < tol:
            return beta, True, it
    return beta, False, max_iter


@dataclass
class BaselineFit:
    coef: np.ndarray                 # (J, 4)
    ridge: list                      # items (labels) that needed the ridge fallback
    iterations: list

    def probabilities(self, ages) -> np.ndarray:
        """Fitted Pr(y=1) at centred ages: ages.shape + (J,)."""
        return expit(cubic_basis(ages) @ self.coef.T)


def fit_baseline(train: PanelDataset, ridge: float = 1e-6, tol: float = 1e-8) -> BaselineFit:
    """Per-item cubic-in-age logistic regressions by IRLS.

    Items where the unpenalised fit fails to converge (separation) are refit
    with a ridge penalty on all coefficients.
    """
    X = cubic_basis(train.row_age)
    Y = train.row_y
    if Y.shape[0] == 0:
        raise ValueError("baseline needs training data")
    coef, fell_back, iters = [], [], []
    for j in range(train.n_items):
        b, ok, it = fit_logistic_irls(X, Y[:, j], tol=tol)
        p = expit(X @ b) if ok else None
        if not ok or np.any(p <= 1e-12) or np.any(p >= 1 - 1e-12):
            b, ok, it = fit_logistic_irls(X, Y[:, j], tol=tol, ridge=ridge)
            fell_back.append(train.item_labels[j])
            if not ok:
                raise ArithmeticError(f"baseline fit for item {train.item_labels[j]} did not converge")
        coef.append(b)
        iters.append(it)
    if fell_back:
        log.warning("baseline used the ridge fallback for items %s", fell_back)
    return BaselineFit(np.array(coef), fell_back, iters)


def baseline_phi(fit: BaselineFit, heldout: PanelDataset) -> PhiResult:
    p = np.clip(fit.probabilities(heldout.row_age), PROB_FLOOR, 1.0 - PROB_FLOOR)
    cell = np.where(heldout.row_y.astype(bool), p, 1.0 - p)           # (rows, J)
    N, J = heldout.n_individuals, heldout.n_items
    start = heldout.row_start
    has = start[1:] > start[:-1]
    phi_ij = np.full((N, J), np.nan)
    if cell.shape[0]:
        phi_ij[has] = np.multiply.reduceat(cell, start[:-1][has], axis=0)
    phi_i = np.where(has, np.prod(np.nan_to_num(phi_ij, nan=1.0), axis=1), np.nan)
    return PhiResult(cell, phi_ij, np.prod(cell, axis=1), phi_i,
                     {"ridge_fallback": fit.ridge, "irls_iterations": fit.iterations})


def baseline_independent_logistic(train: PanelDataset, heldout: PanelDataset) -> PhiResult:
    return baseline_phi(fit_baseline(train), heldout)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def model_label(k: int) -> str:
    return f"TGoM K={k}"


def derived_seed(seed: int, *words) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, words)]).generate_state(1, np.uint64)[0])


@dataclass
class PredictionReport:
    table: pd.DataFrame                 # one row per model, numeric
    folds: np.ndarray
    settings: dict
    individual: dict = field(default_factory=dict)   # model label -> PhiResult aligned with the data

    @property
    def fold_fingerprint(self) -> str:
        return fold_fingerprint(self.folds)

    def formatted(self) -> pd.DataFrame:
        """Rates with ratios to the univariate rate as percentages."""
        out = pd.DataFrame({"model": self.table["model"]})
        for lev in LEVELS:
            out[lev] = self.table[lev].map(lambda v: f"{v:.3f}")
            out[f"{lev}_ratio"] = self.table[f"{lev}_ratio"].map(lambda v: f"{100 * v:.1f}%")
        return out

    def to_json(self) -> dict:
        return {"models": json.loads(self.table.to_json(orient="records")),
                "fold_fingerprint": self.fold_fingerprint, "settings": self.settings}

    def write(self, csv_path, json_path) -> None:
        self.formatted().to_csv(csv_path, index=False)
        with open(json_path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def report_table(results: dict) -> pd.DataFrame:
    rows = []
    for label, res in results.items():
        m = res.means()
        row = {"model": label, **m}
        for lev in LEVELS:
            row[f"{lev}_ratio"] = m[lev] / m["phi_ijt"]
        rows.append(row)
    return pd.DataFrame(rows)


def _merge(parts, data: PanelDataset, J):
    """Scatter per-fold results back into the full dataset's order."""
    N = data.n_individuals
    out = PhiResult(np.full((data.n_rows, J), np.nan), np.full((N, J), np.nan),
                    np.full(data.n_rows, np.nan), np.full(N, np.nan))
    start = data.row_start
    for idx, res in parts:
        rows = np.concatenate([np.arange(start[i], start[i + 1]) for i in idx]) if len(idx) else np.zeros(0, int)
        out.phi_ijt[rows] = res.phi_ijt
        out.phi_it[rows] = res.phi_it
        out.phi_ij[idx] = res.phi_ij
        out.phi_i[idx] = res.phi_i
    return out


def cross_validate(data: PanelDataset, config, seed: int = 0, n_workers: int = 1, progress=None) -> PredictionReport:
    """k-fold cross-validation by individual.

    ``config`` is a :class:`tgom.config.FitConfig`; its ``cv`` block sets the
    folds, the profile counts to compare, M and the draw subsample.  Every
    fit and membership draw gets its own seed derived from ``seed``.
    """
    from .sampler import run_chain

    cv = config.cv
    folds = kfold_split(data.n_individuals, cv.folds, seed)
    parts = {model_label(k): [] for k in cv.models_k}
    if cv.baseline:
        parts[BASELINE_LABEL] = []
    accept = {}
    for f in range(cv.folds):
        test_idx = np.nonzero(folds == f)[0]
        train = data.subset(np.nonzero(folds != f)[0])
        test = data.subset(test_idx)
        for k in cv.models_k:
            sampler = config.with_seed(derived_seed(seed, 1, f, k)).sampler
            try:
                chain = run_chain(train, config.priors, sampler, k, config.partition, n_workers=n_workers)
            except Exception as exc:
                raise type(exc)(f"fold {f + 1}, K={k}: {exc}") from exc
            accept[f"fold{f + 1}_K{k}"] = chain.meta["acceptance"]
            res = phi_quantities(test, chain, cv.membership_draws, derived_seed(seed, 2, f, k), cv.max_draws,
                                 n_workers=n_workers)
            parts[model_label(k)].append((test_idx, res))
            if progress:
                progress({"event": "cv_fit", "fold": f + 1, "K": k, **res.means()})
        if cv.baseline:
            parts[BASELINE_LABEL].append((test_idx, baseline_independent_logistic(train, test)))
    merged = {label: _merge(p, data, data.n_items) for label, p in parts.items()}
    settings = {"folds": cv.folds, "models_k": list(cv.models_k), "membership_draws": cv.membership_draws,
                "max_draws": cv.max_draws, "seed": int(seed), "acceptance": accept,
                "n_iterations": config.sampler.n_iterations, "burn_in": config.sampler.burn_in}
    return PredictionReport(report_table(merged), folds, settings, merged)
