"""Posterior summaries of fitted chains.

Credible intervals are equal-tailed and use the nearest-rank rule on the
sorted draws: the p-quantile of n draws is the ``ceil(p * n)``-th smallest
(1-based, at least the first).

Tables are pandas DataFrames with 1-based ``profile`` and ``cohort``
columns, ready for ``to_csv``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from .chain import PosteriorChain
from .data import from_days
from .model import ksum

QUANTILE_LEVELS = (0.1, 0.5, 0.9)


def nearest_rank_quantile(x, p, axis=0):
    x = np.sort(np.asarray(x, dtype=float), axis=axis)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("no draws")
    r = min(max(int(np.ceil(p * n)), 1), n) - 1
    return np.take(x, r, axis=axis)


def age_quantile(beta0, beta1, q, offset=80.0):
    """Age (in raw years) at which a linear-logit trajectory reaches probability q.

    Returns ``None`` when the slope is not positive: the curve then never
    crosses q while increasing and no onset age exists.
    """
    if not (0.0 < q < 1.0):
        raise ValueError("q must lie in (0, 1)")
    if not beta1 > 0:
        return None
    centered = -(beta0 + np.log((1.0 - q) / q)) / beta1
    back = expit(beta0 + beta1 * centered)
    if abs(back - q) > 1e-9:
        raise ArithmeticError(f"onset age inversion failed: {back} != {q}")
    return float(centered + offset)


def age_quantiles(beta0, beta1, q, offset=80.0):
    """Vectorised :func:`age_quantile`; NaN marks a non-positive slope."""
    if not (0.0 < q < 1.0):
        raise ValueError("q must lie in (0, 1)")
    beta0 = np.asarray(beta0, dtype=float)
    beta1 = np.asarray(beta1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -(beta0 + np.log((1.0 - q) / q)) / beta1 + offset
    return np.where(beta1 > 0, out, np.nan)


def population_xi(chain: PosteriorChain) -> np.ndarray:
    """Per-draw population mean proportions, (D, K).

    For cohort chains the cohort xi are averaged with weights equal to the
    number of individuals in each cohort (equal weights if unknown).
    """
    if chain.n_cohorts == 1:
        return chain.xi[:, 0, :]
    w = np.asarray(chain.meta.get("cohort_sizes") or np.ones(chain.n_cohorts), dtype=float)
    if w.sum() == 0:
        w = np.ones(chain.n_cohorts)
    return np.einsum("dck,c->dk", chain.xi, w / w.sum())


def _summ(x):
    return {"mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
            "q025": float(nearest_rank_quantile(x, 0.025)), "q975": float(nearest_rank_quantile(x, 0.975))}


@dataclass
class ProfileSummary:
    trajectories: pd.DataFrame    # one row per (profile, item)
    xi: pd.DataFrame              # one row per (cohort, profile)
    alpha0: pd.DataFrame          # one row per cohort
    extra: dict = field(default_factory=dict)


def profile_summary(chain: PosteriorChain) -> ProfileSummary:
    if chain.n_draws == 0:
        raise ValueError("empty chain")
    items = chain.item_labels
    off = chain.age_offset
    rows = []
    for k in range(chain.n_profiles):
        for j in range(chain.n_items):
            b0, b1 = chain.beta0[:, k, j], chain.beta1[:, k, j]
            row = {"profile": k + 1, "item": items[j]}
            for name, x in (("beta0", b0), ("beta1", b1)):
                for stat, v in _summ(x).items():
                    row[f"{name}_{stat}"] = v
            for q in QUANTILE_LEVELS:
                a = age_quantiles(b0, b1, q, off)
                ok = np.isfinite(a)
                tag = f"age_q{int(round(q * 100)):02d}"
                row[f"{tag}_defined"] = float(ok.mean())
                if ok.all():
                    s = _summ(a)
                    row.update({f"{tag}_{stat}": v for stat, v in s.items()})
                else:
                    row.update({f"{tag}_{stat}": np.nan for stat in ("mean", "sd", "q025", "q975")})
            rows.append(row)
    xi_rows = []
    a_rows = []
    for c in range(chain.n_cohorts):
        for k in range(chain.n_profiles):
            xi_rows.append({"cohort": c + 1, "profile": k + 1, **_summ(chain.xi[:, c, k])})
        a_rows.append({"cohort": c + 1, **_summ(chain.alpha0[:, c])})
    return ProfileSummary(pd.DataFrame(rows), pd.DataFrame(xi_rows), pd.DataFrame(a_rows))


def onset_age_table(chain: PosteriorChain) -> pd.DataFrame:
    """Posterior-mean onset ages per profile, items ordered by the median-onset age."""
    t = profile_summary(chain).trajectories
    cols = ["profile", "item", "age_q10_mean", "age_q50_mean", "age_q90_mean",
            "age_q10_defined", "age_q50_defined", "age_q90_defined"]
    out = t[cols].copy()
    out["order"] = out.groupby("profile")["age_q50_mean"].rank(method="first", na_option="bottom").astype(int)
    return out.sort_values(["profile", "order"], kind="stable").reset_index(drop=True)


def relabel_profiles(chain: PosteriorChain):
    """Order profiles by decreasing posterior mean of xi.

    One permutation, found from the posterior means (ties keep the original
    order), is applied to every draw: trajectories, xi and stored
    memberships.  Concentrations are untouched.

    Returns
    -------
    chain : PosteriorChain
    perm : ndarray
        ``perm[new_label] = old_label``.
    """
    if chain.n_draws == 0:
        raise ValueError("empty chain")
    means = population_xi(chain).mean(axis=0)
    perm = np.argsort(-means, kind="stable")
    meta = dict(chain.meta)
    old = np.asarray(meta.get("label_permutation") or np.arange(chain.n_profiles))
    meta["label_permutation"] = old[perm].tolist()
    if "acceptance" in meta:
        acc = dict(meta["acceptance"])
        acc["beta"] = np.asarray(acc["beta"])[perm].tolist()
        meta["acceptance"] = acc
    if "final_proposal_sd" in meta:
        sd = dict(meta["final_proposal_sd"])
        for key in ("beta0", "beta1"):
            sd[key] = np.asarray(sd[key])[perm].tolist()
        meta["final_proposal_sd"] = sd
    out = chain.replace(
        beta0=chain.beta0[:, perm, :], beta1=chain.beta1[:, perm, :], xi=chain.xi[..., perm],
        memberships=None if chain.memberships is None else chain.memberships[..., perm], meta=meta)
    return out, perm


@dataclass
class LabelSwitchReport:
    window_means: np.ndarray          # (W, K)
    flags: list                       # dicts: window, reference_window, profiles, difference
    margin: float

    @property
    def flagged_windows(self) -> list:
        return sorted({f["window"] for f in self.flags})

    @property
    def switching(self) -> bool:
        return bool(self.flags)

    def to_json(self) -> dict:
        return {"margin": self.margin, "window_means": self.window_means.tolist(),
                "flagged_windows": self.flagged_windows, "flags": self.flags}


def detect_label_switching(chain: PosteriorChain, n_windows: int = 10, margin: float = 0.02) -> LabelSwitchReport:
    """Windowed check that the ordering of the profile proportions stays put.

    The chain is cut into ``n_windows`` consecutive windows.  For every pair
    of profiles, the first window whose mean difference exceeds ``margin`` in
    magnitude sets the reference order; any later window whose difference
    exceeds ``margin`` with the opposite sign is flagged.
    """
    xi = population_xi(chain)
    if xi.shape[0] < 2 * n_windows and xi.shape[0] >= 2:
        n_windows = max(2, xi.shape[0] // 2)
    if xi.shape[0] < 2:
        raise ValueError("need at least two draws")
    means = np.array([w.mean(axis=0) for w in np.array_split(xi, n_windows)])
    flags = []
    K = xi.shape[1]
    for a in range(K):
        for b in range(a + 1, K):
            d = means[:, a] - means[:, b]
            ref = next((w for w in range(n_windows) if abs(d[w]) > margin), None)
            if ref is None:
                continue
            for w in range(ref + 1, n_windows):
                if abs(d[w]) > margin and np.sign(d[w]) != np.sign(d[ref]):
                    flags.append({"window": w, "reference_window": int(ref), "profiles": [a + 1, b + 1],
                                  "difference": float(d[w])})
    return LabelSwitchReport(means, flags, margin)


def _mean_params(chain):
    return chain.beta0.mean(axis=0), chain.beta1.mean(axis=0)


def trajectory_curve_table(chain: PosteriorChain, ages, mode: str = "extreme", n_individuals: int = 100,
                           seed: int = 0) -> pd.DataFrame:
    """Plot-ready curves over a grid of raw ages.

    Both modes evaluate curves at the posterior-mean trajectory parameters.
    ``extreme`` gives one curve per (item, profile); ``individual`` gives the
    convex combination for a random sample of individuals with stored
    memberships, using their posterior-mean membership vector.

    Columns: item, profile / individual, age, probability.
    """
    ages = np.asarray(ages, dtype=float)
    b0, b1 = _mean_params(chain)
    lam = expit(b0[None] + b1[None] * (ages - chain.age_offset)[:, None, None])   # (A, K, J)
    items = chain.item_labels
    if mode == "extreme":
        A, K, J = lam.shape
        return pd.DataFrame({
            "item": np.repeat(items, K * A),
            "profile": np.tile(np.repeat(np.arange(1, K + 1), A), J),
            "age": np.tile(ages, J * K),
            "probability": lam.transpose(2, 1, 0).ravel(),
        })
    if mode != "individual":
        raise ValueError("mode must be 'extreme' or 'individual'")
    if chain.memberships is None or chain.memberships.shape[1] == 0:
        raise ValueError("individual curves need stored membership draws; refit with store_memberships")
    ids = list(chain.meta.get("membership_ids") or range(chain.memberships.shape[1]))
    S = len(ids)
    pick = np.sort(np.random.default_rng(seed).choice(S, size=min(n_individuals, S), replace=False))
    gbar = chain.memberships[:, pick, :].mean(axis=0)                      # (n, K)
    # sort before summing so the curve does not depend on the profile labels
    curves = ksum(gbar[:, None, None, :] * lam.transpose(0, 2, 1)[None], axis=-1)   # (n, A, J)
    n, A, J = curves.shape
    return pd.DataFrame({
        "item": np.tile(np.repeat(items, A), n),
        "individual": np.repeat([str(ids[p]) for p in pick], J * A),
        "age": np.tile(ages, n * J),
        "probability": curves.transpose(0, 2, 1).ravel(),
    })


def cohort_xi_table(chain: PosteriorChain) -> pd.DataFrame:
    """Posterior mean and 95% equal-tail interval of xi for each (cohort, profile)."""
    if not chain.is_cohort:
        raise ValueError("cohort table requested for a basic-model chain")
    cuts = [from_days(b) for b in chain.meta.get("partition") or []]
    rows = []
    for c in range(chain.n_cohorts):
        for k in range(chain.n_profiles):
            x = chain.xi[:, c, k]
            rows.append({"cohort": c + 1, "dob_from": cuts[c - 1] if c > 0 else None,
                         "dob_to": cuts[c] if c < len(cuts) else None, "profile": k + 1,
                         "mean": float(x.mean()), "q025": float(nearest_rank_quantile(x, 0.025)),
                         "q975": float(nearest_rank_quantile(x, 0.975))})
    return pd.DataFrame(rows)
