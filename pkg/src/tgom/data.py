"""Panel CSV ingestion, cohort assignment and synthetic data generation.

Panel CSV (long format, one row per observed individual-wave)::

    id,wave,interview_date,dob,<item 1>,...,<item J>

Dates are ISO-8601 (``YYYY-MM-DD``).  Responses are ``0`` or ``1``; a row
whose responses are all blank is treated as an unobserved wave.  Ages are
``(interview - dob) / 365 - age_offset`` with days counted exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import date

import numpy as np
import pandas as pd

from . import rng as streams_mod
from .model import (
    DEFAULT_AGE_OFFSET,
    YEAR_DAYS,
    CohortDirichletParams,
    CohortPartition,
    DirichletParams,
    PanelDataset,
    TrajectoryParams,
)
from .rng import CounterStreams

FIXED_COLUMNS = ("id", "wave", "interview_date", "dob")
_EPOCH = date(1970, 1, 1).toordinal()


def to_days(value) -> int:
    """Days since 1970-01-01 of an ISO date string (or ``datetime.date``)."""
    if isinstance(value, date):
        return value.toordinal() - _EPOCH
    return date.fromisoformat(str(value).strip()).toordinal() - _EPOCH


def from_days(days) -> str:
    return date.fromordinal(int(days) + _EPOCH).isoformat()


@dataclass(frozen=True)
class ValidationIssue:
    row: int          # 1-based line number in the file (header is line 1)
    column: str
    code: str         # duplicate | non_binary | missing_dob | partial_wave | bad_date | bad_header | age_order
    message: str

    def __str__(self):
        return f"line {self.row}, column {self.column!r}: {self.message} [{self.code}]"


class PanelValidationError(ValueError):
    """All problems found while reading a panel file."""

    def __init__(self, issues):
        self.issues = list(issues)
        head = "; ".join(str(i) for i in self.issues[:10])
        more = f" (+{len(self.issues) - 10} more)" if len(self.issues) > 10 else ""
        super().__init__(f"{len(self.issues)} validation error(s): {head}{more}")

    @property
    def codes(self) -> set:
        return {i.code for i in self.issues}


def parse_panel(source, *, age_offset: float = DEFAULT_AGE_OFFSET, require_dob: bool = False,
                wave_labels=None) -> PanelDataset:
    """Read a long-format panel CSV.

    Parameters
    ----------
    source : path or text file object
    require_dob : bool
        Also reject blank (unobserved) rows without a date of birth.  Rows
        with responses always need one, since ages derive from it.
    wave_labels : sequence of str, optional
        Wave order.  By default waves are ordered by their earliest interview
        date.

    Raises
    ------
    PanelValidationError
        Listing every problem with its line number and column.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    issues: list[ValidationIssue] = []
    try:
        header = next(reader)
    except StopIteration:
        raise PanelValidationError([ValidationIssue(1, "", "bad_header", "file is empty")])
    header = [h.strip() for h in header]
    if tuple(header[:4]) != FIXED_COLUMNS or len(header) < 5:
        raise PanelValidationError([ValidationIssue(
            1, "", "bad_header", f"header must start with {','.join(FIXED_COLUMNS)} followed by item columns")])
    items = tuple(header[4:])
    J = len(items)

    records = []   # (line, id, wave, interview, dob, responses)
    seen = {}
    dob_of = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            issues.append(ValidationIssue(line, "", "bad_row", f"expected {len(header)} fields, got {len(row)}"))
            continue
        pid, wave, interview, dob = (c.strip() for c in row[:4])
        resp = [c.strip() for c in row[4:]]
        if (pid, wave) in seen:
            issues.append(ValidationIssue(line, "wave", "duplicate",
                                          f"duplicate (id, wave) = ({pid}, {wave}); first on line {seen[(pid, wave)]}"))
            continue
        seen[(pid, wave)] = line
        dob_days = None
        if dob:
            try:
                dob_days = to_days(dob)
            except ValueError:
                issues.append(ValidationIssue(line, "dob", "bad_date", f"not an ISO date: {dob!r}"))
        elif require_dob:
            issues.append(ValidationIssue(line, "dob", "missing_dob", "date of birth required"))
        if dob_days is not None:
            if dob_of.setdefault(pid, dob_days) != dob_days:
                issues.append(ValidationIssue(line, "dob", "inconsistent_dob",
                                              f"date of birth of {pid} changes between rows"))
        present = [c != "" for c in resp]
        if not any(present):
            continue
        bad = False
        if not all(present):
            missing = [items[q] for q, p in enumerate(present) if not p]
            issues.append(ValidationIssue(line, missing[0], "partial_wave",
                                          f"wave has responses for some items but not {', '.join(missing)}"))
            bad = True
        for q, c in enumerate(resp):
            if c not in ("", "0", "1"):
                issues.append(ValidationIssue(line, items[q], "non_binary", f"response must be 0 or 1, got {c!r}"))
                bad = True
        try:
            iv_days = to_days(interview)
        except ValueError:
            issues.append(ValidationIssue(line, "interview_date", "bad_date", f"not an ISO date: {interview!r}"))
            bad = True
            iv_days = None
        if dob_days is None and iv_days is not None:
            issues.append(ValidationIssue(line, "dob", "missing_dob", "age cannot be computed without a date of birth"))
            bad = True
        if not bad:
            records.append((line, pid, wave, iv_days, dob_days, [int(c) for c in resp]))
    if issues:
        raise PanelValidationError(issues)

    ids = list(dict.fromkeys(r[1] for r in records))
    if wave_labels is None:
        first = {}
        for r in records:
            first[r[2]] = min(first.get(r[2], r[3]), r[3])
        waves = sorted(first, key=lambda w: (first[w], w))
    else:
        waves = list(wave_labels)
        unknown = sorted({r[2] for r in records} - set(waves))
        if unknown:
            raise PanelValidationError([ValidationIssue(0, "wave", "unknown_wave", f"waves not listed: {unknown}")])
    N, T = len(ids), len(waves)
    pos = {p: i for i, p in enumerate(ids)}
    wpos = {w: t for t, w in enumerate(waves)}
    y = np.full((N, T, J), -1, dtype=np.int8)
    interview = np.full((N, T), np.nan)
    observed = np.zeros((N, T), dtype=bool)
    dob = np.full(N, np.nan)
    lines = np.zeros((N, T), dtype=np.int64)
    for line, pid, wave, iv, db, resp in records:
        i, t = pos[pid], wpos[wave]
        y[i, t] = resp
        interview[i, t] = iv
        observed[i, t] = True
        dob[i] = db
        lines[i, t] = line
    ages = (interview - dob[:, None]) / YEAR_DAYS - age_offset
    for i in range(N):
        a = ages[i, observed[i]]
        bad = np.nonzero(np.diff(a) <= 0)[0]
        if bad.size:
            t = np.nonzero(observed[i])[0][bad[0] + 1]
            issues.append(ValidationIssue(int(lines[i, t]), "interview_date", "age_order",
                                          f"ages of {ids[i]} do not increase across waves"))
    if issues:
        raise PanelValidationError(issues)
    return PanelDataset(outcomes=y, ages=ages, observed=observed, dob=dob, interview=interview,
                        ids=tuple(ids), item_labels=items, wave_labels=tuple(waves), age_offset=age_offset)


def write_panel(data: PanelDataset, path) -> None:
    """Write the long-format CSV read by :func:`parse_panel`."""
    if data.interview is None or data.dob is None:
        raise ValueError("writing a panel needs interview dates and dates of birth")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FIXED_COLUMNS) + list(data.item_labels))
        for i in range(data.n_individuals):
            for t in np.nonzero(data.observed[i])[0]:
                w.writerow([data.ids[i], data.wave_labels[t], from_days(data.interview[i, t]),
                            from_days(data.dob[i])] + [int(v) for v in data.outcomes[i, t]])


def assign_cohorts(data: PanelDataset, partition: CohortPartition):
    """Cohort index per individual and the cohort-by-wave count table.

    Returns
    -------
    index : (N,) int array, 0-based
    table : DataFrame
        Rows are cohorts (with their DOB range), columns are waves; cells
        count observed individual-waves.
    """
    if data.dob is None or np.any(np.isnan(data.dob)):
        raise ValueError("every individual needs a date of birth")
    index = np.atleast_1d(partition.index_of(data.dob)) if data.n_individuals else np.zeros(0, np.int64)
    C = partition.n_cohorts
    counts = np.zeros((C, data.n_waves), dtype=np.int64)
    np.add.at(counts, (np.repeat(index, data.n_waves), np.tile(np.arange(data.n_waves), data.n_individuals)),
              data.observed.ravel().astype(np.int64))
    cuts = [from_days(b) for b in partition.boundaries]
    ranges = [f"{lo}--{hi}" for lo, hi in zip([""] + cuts, cuts + [""])]
    table = pd.DataFrame(counts, columns=list(data.wave_labels),
                         index=pd.Index([f"{c + 1}" for c in range(C)], name="cohort"))
    table.insert(0, "dob", ranges)
    return index.astype(np.int64), table


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Population and survey design for :func:`generate_dataset`.

    ``wave_dates`` and ``dob_range`` are days since 1970-01-01; the DOB is
    uniform on ``[dob_range[0], dob_range[1])`` restricted to people old
    enough to be interviewed at the last wave.  An individual appears in a
    wave when their age is at least ``eligibility_age``.
    """

    params: TrajectoryParams
    dirichlet: DirichletParams | CohortDirichletParams
    n_individuals: int
    wave_dates: tuple
    dob_range: tuple
    partition: CohortPartition | None = None
    eligibility_age: float = 65.0
    age_offset: float = DEFAULT_AGE_OFFSET
    item_labels: tuple = ()
    wave_labels: tuple = ()
    path: str = "augmented"   # or "marginal"

    def __post_init__(self):
        if isinstance(self.dirichlet, CohortDirichletParams):
            if self.partition is None or self.partition.n_cohorts != self.dirichlet.n_cohorts:
                raise ValueError("cohort Dirichlet parameters need a matching partition")
        if self.dirichlet.n_profiles != self.params.n_profiles:
            raise ValueError("Dirichlet and trajectory parameters disagree on K")
        if self.path not in ("augmented", "marginal"):
            raise ValueError("path must be 'augmented' or 'marginal'")
        if self.n_individuals < 0:
            raise ValueError("n_individuals must be >= 0")
        waves = tuple(int(d) for d in self.wave_dates)
        if not waves or any(b <= a for a, b in zip(waves, waves[1:])):
            raise ValueError("wave dates must be strictly increasing")
        object.__setattr__(self, "wave_dates", waves)
        object.__setattr__(self, "dob_range", tuple(int(d) for d in self.dob_range))

    @property
    def n_profiles(self) -> int:
        return self.params.n_profiles

    @property
    def n_items(self) -> int:
        return self.params.n_items

    def to_json(self) -> dict:
        d = self.dirichlet
        pop = ({"cohorts": [{"alpha0": p.alpha0, "xi": list(p.xi)} for p in d.per_cohort]}
               if isinstance(d, CohortDirichletParams) else {"alpha0": d.alpha0, "xi": list(d.xi)})
        return {
            "n_individuals": self.n_individuals,
            "beta0": self.params.beta0.tolist(), "beta1": self.params.beta1.tolist(),
            "dirichlet": pop,
            "cohort_cut_points": [] if self.partition is None else [from_days(b) for b in self.partition.boundaries],
            "wave_dates": [from_days(w) for w in self.wave_dates],
            "dob_range": [from_days(v) for v in self.dob_range],
            "eligibility_age": self.eligibility_age, "age_offset": self.age_offset,
            "item_labels": list(self.item_labels), "wave_labels": list(self.wave_labels),
            "path": self.path,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorSpec":
        pop = obj["dirichlet"]
        if "cohorts" in pop:
            dirichlet = CohortDirichletParams(tuple(DirichletParams(c["alpha0"], tuple(c["xi"])) for c in pop["cohorts"]))
        else:
            dirichlet = DirichletParams(pop["alpha0"], tuple(pop["xi"]))
        cuts = obj.get("cohort_cut_points") or []
        partition = CohortPartition(tuple(to_days(c) for c in cuts)) if cuts or "cohorts" in pop else None
        return cls(
            params=TrajectoryParams(obj["beta0"], obj["beta1"]), dirichlet=dirichlet,
            n_individuals=int(obj["n_individuals"]),
            wave_dates=tuple(to_days(w) for w in obj["wave_dates"]),
            dob_range=tuple(to_days(v) for v in obj["dob_range"]), partition=partition,
            eligibility_age=float(obj.get("eligibility_age", 65.0)),
            age_offset=float(obj.get("age_offset", DEFAULT_AGE_OFFSET)),
            item_labels=tuple(obj.get("item_labels") or ()), wave_labels=tuple(obj.get("wave_labels") or ()),
            path=obj.get("path", "augmented"),
        )


@dataclass
class GroundTruth:
    memberships: np.ndarray              # (N, K)
    cohort: np.ndarray                   # (N,) 0-based; zeros without a partition
    z: np.ndarray | None = None          # (rows, J) for the augmented path
    extra: dict = field(default_factory=dict)

    def to_json(self, data: PanelDataset) -> dict:
        out = {"ids": list(data.ids), "memberships": self.memberships.tolist(),
               "cohort": self.cohort.tolist(), **self.extra}
        if self.z is not None:
            out["z"] = self.z.tolist()
        return out


def generate_dataset(spec: GeneratorSpec, seed: int):
    """Simulate a panel from the model.

    Returns ``(PanelDataset, GroundTruth)``.
    """
    gen = CounterStreams(seed).generator(streams_mod.GENERATE)
    K, J, N = spec.n_profiles, spec.n_items, spec.n_individuals
    waves = np.asarray(spec.wave_dates)
    T = waves.size
    lo, hi = spec.dob_range
    latest = int(waves[-1] - np.ceil(spec.eligibility_age * YEAR_DAYS))
    hi = min(hi, latest + 1)
    if N and hi <= lo:
        raise ValueError("no date of birth in the range is old enough for the last wave")
    dob = gen.integers(lo, hi, size=N).astype(float) if N else np.zeros(0)

    if spec.partition is not None:
        cohort = np.atleast_1d(spec.partition.index_of(dob)).astype(np.int64) if N else np.zeros(0, np.int64)
    else:
        cohort = np.zeros(N, dtype=np.int64)
    pops = spec.dirichlet.per_cohort if isinstance(spec.dirichlet, CohortDirichletParams) else (spec.dirichlet,)
    g = np.empty((N, K))
    for c, pop in enumerate(pops):
        members = np.nonzero(cohort == c)[0]
        if members.size:
            g[members] = gen.dirichlet(pop.alpha, size=members.size)

    raw_age = (waves[None, :] - dob[:, None]) / YEAR_DAYS
    observed = raw_age >= spec.eligibility_age
    ages = np.where(observed, raw_age - spec.age_offset, np.nan)
    interview = np.where(observed, waves[None, :].astype(float), np.nan)

    rows_i, rows_t = np.nonzero(observed)
    age_rows = ages[rows_i, rows_t]
    lam = 1.0 / (1.0 + np.exp(-spec.params.linear_predictor(age_rows)))      # (rows, J, K)
    u = gen.random((rows_i.size, J))
    z_rows = None
    if spec.path == "augmented":
        cum = np.cumsum(g[rows_i], axis=1)
        v = gen.random((rows_i.size, J))
        z_rows = np.minimum((v[..., None] > cum[:, None, :]).sum(axis=-1), K - 1).astype(np.int16)
        p = np.take_along_axis(lam, z_rows[..., None].astype(np.intp), axis=-1)[..., 0]
    else:
        p = np.einsum("rjk,rk->rj", lam, g[rows_i])
    y = np.full((N, T, J), -1, dtype=np.int8)
    y[rows_i, rows_t] = (u < p).astype(np.int8)

    width = len(str(max(N, 1)))
    data = PanelDataset(
        outcomes=y, ages=ages, observed=observed, dob=dob, interview=interview,
        ids=tuple(f"p{i:0{width}d}" for i in range(N)),
        item_labels=spec.item_labels or tuple(f"item{j + 1}" for j in range(J)),
        wave_labels=spec.wave_labels or tuple(from_days(w)[:4] for w in waves),
        age_offset=spec.age_offset,
    )
    return data, GroundTruth(memberships=g, cohort=cohort, z=z_rows)


def write_ground_truth(truth: GroundTruth, data: PanelDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_json(data), fh)
        fh.write("\n")
