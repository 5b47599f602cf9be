"""Posterior draws and their on-disk format.

A chain file is UTF-8 text, one JSON object per line::

    {"format": "tgom-chain", "version": 1, "n_draws": D, "meta": {...}}
    {"draw": 0, "iteration": ..., "beta0": [...], ...}      # D draw records
    {"end": true, "n_draws": D, "sha256": "<hex>"}

Arrays inside a record are flattened row-major; their shapes follow from
the header (``n_profiles``, ``n_items``, cohort count, stored memberships).
The trailer digest covers every byte before the trailer line.  Floats are
written with Python's shortest round-trip repr, so reading back is exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

FORMAT = "tgom-chain"
VERSION = 1


class ChainFormatError(ValueError):
    pass


class ChainVersionError(ChainFormatError):
    pass


class ChainTruncatedError(ChainFormatError):
    pass


class ChainChecksumError(ChainFormatError):
    pass


def _jsonable(meta):
    return json.loads(json.dumps(meta))


@dataclass(eq=False)
class PosteriorChain:
    """Thinned post burn-in draws, in sampling order.

    Attributes
    ----------
    beta0, beta1 : (D, K, J)
    alpha0 : (D, C)
        Concentration per cohort; C = 1 for the basic model.
    xi : (D, C, K)
    log_posterior : (D,)
        Complete-data log posterior after the sweep that produced the draw.
    iterations : (D,) int
    memberships : (D, S, K) or None
        Membership draws of the S individuals listed in
        ``meta["membership_ids"]``.
    meta : dict
        JSON-compatible run description (sampler settings, priors, dataset
        fingerprint, acceptance rates, ...).
    """

    beta0: np.ndarray
    beta1: np.ndarray
    alpha0: np.ndarray
    xi: np.ndarray
    log_posterior: np.ndarray
    iterations: np.ndarray
    memberships: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        # C order keeps reductions over draws independent of how the arrays were sliced
        for name in self.ARRAYS:
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.ascontiguousarray(value))
        self.meta = _jsonable(self.meta)

    ARRAYS = ("beta0", "beta1", "alpha0", "xi", "log_posterior", "iterations", "memberships")

    @property
    def n_draws(self) -> int:
        return self.beta0.shape[0]

    @property
    def n_profiles(self) -> int:
        return self.beta0.shape[1]

    @property
    def n_items(self) -> int:
        return self.beta0.shape[2]

    @property
    def n_cohorts(self) -> int:
        return self.alpha0.shape[1]

    @property
    def is_cohort(self) -> bool:
        return self.meta.get("model") == "cohort"

    @property
    def age_offset(self) -> float:
        return float(self.meta.get("age_offset", 80.0))

    @property
    def item_labels(self) -> list:
        labels = self.meta.get("item_labels")
        return list(labels) if labels else [f"item{j + 1}" for j in range(self.n_items)]

    def __eq__(self, other):
        if not isinstance(other, PosteriorChain):
            return NotImplemented
        for name in self.ARRAYS:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.dtype != b.dtype or a.tobytes() != b.tobytes()):
                return False
        return self.meta == other.meta

    def replace(self, **changes) -> "PosteriorChain":
        kw = {name: getattr(self, name) for name in self.ARRAYS}
        kw["meta"] = self.meta
        kw.update(changes)
        return PosteriorChain(**kw)

    def select(self, index) -> "PosteriorChain":
        """Chain restricted to the draws at ``index``."""
        index = np.asarray(index)
        kw = {name: None if getattr(self, name) is None else getattr(self, name)[index] for name in self.ARRAYS}
        return PosteriorChain(meta=self.meta, **kw)


def _header(chain: PosteriorChain) -> dict:
    S = 0 if chain.memberships is None else chain.memberships.shape[1]
    return {
        "format": FORMAT,
        "version": VERSION,
        "n_draws": chain.n_draws,
        "dims": {"K": chain.n_profiles, "J": chain.n_items, "C": chain.n_cohorts, "S": S,
                 "has_memberships": chain.memberships is not None},
        "meta": chain.meta,
    }


def _dumps(obj) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), sort_keys=True) + "\n").encode()


def write_chain(chain: PosteriorChain, path) -> None:
    h = hashlib.sha256()
    with open(path, "wb") as fh:
        def emit(obj):
            line = _dumps(obj)
            h.update(line)
            fh.write(line)

        emit(_header(chain))
        for d in range(chain.n_draws):
            rec = {"draw": d, "iteration": int(chain.iterations[d]),
                   "log_posterior": float(chain.log_posterior[d])}
            for name in ("beta0", "beta1", "alpha0", "xi"):
                rec[name] = getattr(chain, name)[d].ravel().tolist()
            if chain.memberships is not None:
                rec["memberships"] = chain.memberships[d].ravel().tolist()
            emit(rec)
        fh.write(_dumps({"end": True, "n_draws": chain.n_draws, "sha256": h.hexdigest()}))


def read_chain(path) -> PosteriorChain:
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = raw.split(b"\n")
    if not lines or not lines[0]:
        raise ChainTruncatedError(f"{path}: empty chain file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ChainFormatError(f"{path}: unreadable header") from exc
    if header.get("format") != FORMAT:
        raise ChainFormatError(f"{path}: not a chain file")
    if header.get("version") != VERSION:
        raise ChainVersionError(f"{path}: chain format version {header.get('version')}, expected {VERSION}")
    D = int(header["n_draws"])
    # complete file: header, D records, trailer, and the empty string after the final newline
    if len(lines) != D + 3 or lines[D + 2] != b"":
        raise ChainTruncatedError(f"{path}: file ends before the trailer")
    try:
        trailer = json.loads(lines[D + 1])
    except json.JSONDecodeError as exc:
        raise ChainTruncatedError(f"{path}: trailer missing or damaged") from exc
    if not trailer.get("end"):
        raise ChainTruncatedError(f"{path}: trailer missing")
    body = b"".join(line + b"\n" for line in lines[: D + 1])
    if hashlib.sha256(body).hexdigest() != trailer.get("sha256") or trailer.get("n_draws") != D:
        raise ChainChecksumError(f"{path}: checksum mismatch")

    dims = header["dims"]
    K, J, C, S = dims["K"], dims["J"], dims["C"], dims["S"]
    beta0 = np.empty((D, K, J))
    beta1 = np.empty((D, K, J))
    alpha0 = np.empty((D, C))
    xi = np.empty((D, C, K))
    lp = np.empty(D)
    its = np.empty(D, dtype=np.int64)
    mem = np.empty((D, S, K)) if dims["has_memberships"] else None
    for d in range(D):
        rec = json.loads(lines[d + 1])
        beta0[d] = np.reshape(rec["beta0"], (K, J))
        beta1[d] = np.reshape(rec["beta1"], (K, J))
        alpha0[d] = rec["alpha0"]
        xi[d] = np.reshape(rec["xi"], (C, K))
        lp[d] = rec["log_posterior"]
        its[d] = rec["iteration"]
        if mem is not None:
            mem[d] = np.reshape(rec["memberships"], (S, K))
    return PosteriorChain(beta0=beta0, beta1=beta1, alpha0=alpha0, xi=xi, log_posterior=lp,
                          iterations=its, memberships=mem, meta=header["meta"])
