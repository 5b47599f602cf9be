"""Run configuration files.

A configuration is a JSON object::

    {
      "model": "basic" | "cohort",
      "K": 2,
      "priors": {...},             # any Priors field
      "sampler": {...},            # any SamplerConfig field
      "cohort_cut_points": ["1906-01-01", ...],   # cohort model only
      "age_offset": 80,
      "cv": {"folds": 4, "models_k": [1, 2], "membership_draws": 20, "max_draws": null}
    }

Every key except ``K`` is optional.  ``load_config`` reports every problem
it finds at once through :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .data import to_days
from .model import DEFAULT_AGE_OFFSET, CohortPartition, Priors
from .sampler import SamplerConfig

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tgom run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["K"],
    "properties": {
        "model": {"enum": ["basic", "cohort"]},
        "K": {"type": "integer", "minimum": 1},
        "age_offset": _NUM,
        "cohort_cut_points": {"type": "array", "items": {"type": "string", "format": "date"}},
        "priors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a_alpha": _POS, "b_alpha": _POS, "mu0": _NUM, "sigma0_sq": _POS,
                "mu1": _NUM, "sigma1_sq": _POS, "cohort_tau": _POS, "cohort_eta": _POS,
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_iterations": {"type": "integer", "minimum": 1},
                "burn_in": {"type": "integer", "minimum": 0},
                "thin_keep_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "proposal_sd_beta0": _POS,
                "proposal_sd_beta1": _POS,
                "proposal_sd_log_alpha": _POS,
                "adapt": {"type": "boolean"},
                "adapt_window": {"type": "integer", "minimum": 1},
                "target_accept_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "store_memberships": {"type": "integer", "minimum": -1},
                "membership_floor": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "progress_every": {"type": "integer", "minimum": 0},
            },
        },
        "cv": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "folds": {"type": "integer", "minimum": 2},
                "models_k": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "membership_draws": {"type": "integer", "minimum": 1},
                "max_draws": {"type": ["integer", "null"], "minimum": 1},
                "baseline": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class CVSettings:
    folds: int = 4
    models_k: tuple = (1, 2)
    membership_draws: int = 20
    max_draws: int | None = None
    baseline: bool = True


@dataclass(frozen=True)
class FitConfig:
    K: int
    model: str = "basic"
    priors: Priors = field(default_factory=Priors)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cohort_cut_points: tuple = ()
    age_offset: float = DEFAULT_AGE_OFFSET
    cv: CVSettings = field(default_factory=CVSettings)

    @property
    def partition(self) -> CohortPartition | None:
        if self.model != "cohort":
            return None
        return CohortPartition(tuple(to_days(d) for d in self.cohort_cut_points))

    def with_seed(self, seed: int) -> "FitConfig":
        return dataclasses.replace(self, sampler=dataclasses.replace(self.sampler, seed=int(seed)))

    def to_json(self) -> dict:
        s = dataclasses.asdict(self.sampler)
        s["target_accept_range"] = list(s["target_accept_range"])
        cv = dataclasses.asdict(self.cv)
        cv["models_k"] = list(cv["models_k"])
        return {"model": self.model, "K": self.K, "priors": dataclasses.asdict(self.priors), "sampler": s,
                "cohort_cut_points": list(self.cohort_cut_points), "age_offset": self.age_offset, "cv": cv}


def _where(err) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def _semantic_problems(raw) -> list:
    """Checks beyond the schema; tolerant of values the schema already rejected."""
    problems = []
    model = raw.get("model", "basic")
    cuts = raw.get("cohort_cut_points", [])
    if isinstance(cuts, list) and all(isinstance(c, str) for c in cuts):
        days = []
        for c in cuts:
            try:
                days.append(to_days(c))
            except ValueError:
                problems.append(f"cohort_cut_points: {c!r} is not an ISO date")
        if len(days) == len(cuts) and any(b <= a for a, b in zip(days, days[1:])):
            problems.append("cohort_cut_points: dates must be strictly increasing")
        if model == "basic" and cuts:
            problems.append("cohort_cut_points: only used by the cohort model")
    pr = raw.get("priors", {})
    if isinstance(pr, dict) and (pr.get("mu0", 0) != 0 or pr.get("mu1", 0) != 0):
        problems.append("priors: mu0 and mu1 must be 0 (the trajectory update assumes zero-mean priors)")
    s = raw.get("sampler", {})
    if isinstance(s, dict):
        probe = SamplerConfig.__new__(SamplerConfig)
        for name, f in SamplerConfig.__dataclass_fields__.items():
            object.__setattr__(probe, name, s.get(name, f.default))
        try:
            problems.extend(f"sampler: {p}" for p in probe.problems())
        except (TypeError, ValueError):
            pass   # wrong types, already reported by the schema
    return problems


def config_from_dict(raw) -> FitConfig:
    """Validate a parsed configuration; every problem is reported at once."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = [f"{_where(e)}: {e.message}"
                for e in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))]
    if not isinstance(raw, dict):
        raise ConfigError(problems)
    problems += _semantic_problems(raw)
    if problems:
        raise ConfigError(problems)
    s = dict(raw.get("sampler", {}))
    if "target_accept_range" in s:
        s["target_accept_range"] = tuple(s["target_accept_range"])
    cv = dict(raw.get("cv", {}))
    if "models_k" in cv:
        cv["models_k"] = tuple(cv["models_k"])
    return FitConfig(K=int(raw["K"]), model=raw.get("model", "basic"), priors=Priors(**raw.get("priors", {})),
                     sampler=SamplerConfig(**s), cohort_cut_points=tuple(raw.get("cohort_cut_points", ())),
                     age_offset=float(raw.get("age_offset", DEFAULT_AGE_OFFSET)), cv=CVSettings(**cv))


def load_config(path) -> FitConfig:
    """Read and validate a configuration file.

    Raises
    ------
    FileNotFoundError
        The file does not exist.
    ConfigError
        Unparseable JSON or any schema / semantic problem (all reported).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return config_from_dict(raw)


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2) + "\n"
