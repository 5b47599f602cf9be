"""Command line interface.

    tgom simulate SPEC --out DIR [--seed S]
    tgom fit DATA --config CONFIG --out DIR [--seed S] [--threads N]
    tgom summarize CHAIN --out DIR [--cohort] [--ages LO:HI:STEP]
    tgom cv DATA --config CONFIG --out DIR [--seed S] [--threads N]
    tgom predict CHAIN HOLDOUT --out DIR [--seed S] [--membership-draws M]

Exit codes: 0 success, 2 usage or configuration, 3 data validation,
4 numerical failure, 5 input/output.  Failures print one JSON error record
on standard error; progress events are JSON lines on standard error too.
Every output directory receives a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    cohort_xi_table,
    detect_label_switching,
    onset_age_table,
    profile_summary,
    relabel_profiles,
    trajectory_curve_table,
)
from .chain import ChainFormatError, read_chain, write_chain
from .config import ConfigError, load_config
from .data import GeneratorSpec, PanelValidationError, generate_dataset, parse_panel, write_ground_truth, write_panel
from .prediction import phi_quantities
from .sampler import NumericalError, run_chain

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class CLIError(Exception):
    def __init__(self, code, kind, message, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _emit(record):
    sys.stderr.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    sys.stderr.flush()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _default_threads():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.started = _now()
        self.outputs = []
        self.info = {}
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CLIError(EXIT_IO, "io", f"cannot create output directory: {exc}") from exc

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def finish(self):
        manifest = {"command": self.command, "argv": self.args.argv, "tool": "tgom", "version": __version__,
                    "seed": self.args.seed, "started": self.started, "finished": _now(),
                    "outputs": sorted(self.outputs), **self.info}
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _config(path):
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise CLIError(EXIT_USAGE, "config", "config not found", path=str(path)) from exc
    except ConfigError as exc:
        raise CLIError(EXIT_USAGE, "config", "invalid configuration", problems=exc.problems) from exc


def _panel(path, **kw):
    try:
        return parse_panel(path, **kw)
    except PanelValidationError as exc:
        raise CLIError(EXIT_DATA, "data", "panel validation failed",
                       problems=[{"row": i.row, "column": i.column, "code": i.code, "message": i.message}
                                 for i in exc.issues]) from exc


def _seed(args, config=None):
    if args.seed is None:
        args.seed = config.sampler.seed if config is not None else 0
    return args.seed


def _progress(event):
    _emit(event)


def _threads(args):
    return max(1, args.threads or _default_threads())


def cmd_simulate(args):
    try:
        spec = GeneratorSpec.from_json(json.loads(Path(args.spec).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise CLIError(EXIT_USAGE, "config", f"invalid generator spec: {exc}") from exc
    seed = _seed(args)
    run = Run(args, "simulate")
    data, truth = generate_dataset(spec, seed)
    write_panel(data, run.path("data.csv"))
    # kept apart from the data so that fits cannot pick it up by accident
    write_ground_truth(truth, data, run.path("ground_truth.json"))
    run.info.update(spec=spec.to_json(), dataset_fingerprint=data.fingerprint())
    run.finish()


def cmd_fit(args):
    config = _config(args.config)
    seed = _seed(args, config)
    config = config.with_seed(seed)
    data = _panel(args.data, age_offset=config.age_offset, require_dob=config.model == "cohort")
    run = Run(args, "fit")
    chain = run_chain(data, config.priors, config.sampler, config.K, config.partition,
                      n_workers=_threads(args), progress=None if args.quiet else _progress)
    write_chain(chain, run.path("chain.jsonl"))
    diag = {"acceptance": chain.meta["acceptance"], "final_proposal_sd": chain.meta["final_proposal_sd"],
            "n_draws": chain.n_draws, "empty_cohorts": chain.meta["empty_cohorts"]}
    if chain.n_draws >= 2:
        diag["label_switching"] = detect_label_switching(chain).to_json()
    with open(run.path("diagnostics.json"), "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.info.update(config=config.to_json(), dataset_fingerprint=data.fingerprint(), threads=_threads(args))
    run.finish()


def _age_grid(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, "usage", f"--ages expects LO:HI:STEP, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise CLIError(EXIT_USAGE, "usage", "--ages needs LO <= HI and STEP > 0")
    return np.arange(lo, hi + step / 2, step)


def _read_chain(path):
    try:
        return read_chain(path)
    except (ChainFormatError, OSError) as exc:
        raise CLIError(EXIT_IO, "io", f"cannot read chain: {exc}") from exc


def cmd_summarize(args):
    ages = _age_grid(args.ages)
    _seed(args)
    chain = _read_chain(args.chain)
    if args.cohort and not chain.is_cohort:
        raise CLIError(EXIT_USAGE, "usage", "cohort table requested but the chain was fitted with the basic model")
    run = Run(args, "summarize")
    if chain.n_draws == 0:
        raise CLIError(EXIT_DATA, "data", "chain has no draws")
    if not args.no_relabel:
        chain, perm = relabel_profiles(chain)
    else:
        perm = np.arange(chain.n_profiles)
    summ = profile_summary(chain)
    summ.trajectories.to_csv(run.path("profiles.csv"), index=False)
    onset_age_table(chain).to_csv(run.path("onset_ages.csv"), index=False)
    summ.xi.to_csv(run.path("xi.csv"), index=False)
    summ.alpha0.to_csv(run.path("alpha0.csv"), index=False)
    trajectory_curve_table(chain, ages).to_csv(run.path("curves_extreme.csv"), index=False)
    if chain.memberships is not None and chain.memberships.shape[1] > 0:
        trajectory_curve_table(chain, ages, mode="individual", n_individuals=args.individuals,
                               seed=_seed(args)).to_csv(run.path("curves_individual.csv"), index=False)
    if chain.is_cohort:
        cohort_xi_table(chain).to_csv(run.path("cohort_xi.csv"), index=False)
    if chain.n_draws >= 2:
        with open(run.path("label_switching.json"), "w") as fh:
            json.dump(detect_label_switching(chain).to_json(), fh, indent=2)
            fh.write("\n")
    run.info.update(chain=str(args.chain), relabel_permutation=[int(p) for p in perm],
                    dataset_fingerprint=chain.meta.get("dataset_fingerprint"))
    run.finish()


def cmd_cv(args):
    from dataclasses import replace

    from .prediction import cross_validate

    config = _config(args.config)
    if args.folds is not None:
        if args.folds < 2:
            raise CLIError(EXIT_USAGE, "usage", "--folds must be at least 2")
        config = replace(config, cv=replace(config.cv, folds=args.folds))
    seed = _seed(args, config)
    data = _panel(args.data, age_offset=config.age_offset, require_dob=config.model == "cohort")
    if config.cv.folds > data.n_individuals:
        raise CLIError(EXIT_DATA, "data",
                       f"{config.cv.folds} folds requested for {data.n_individuals} individuals")
    run = Run(args, "cv")
    report = cross_validate(data, config, seed=seed, n_workers=_threads(args),
                            progress=None if args.quiet else _progress)
    report.write(run.path("prediction.csv"), run.path("prediction.json"))
    run.info.update(config=config.to_json(), dataset_fingerprint=data.fingerprint(),
                    fold_fingerprint=report.fold_fingerprint, threads=_threads(args))
    run.finish()


def cmd_predict(args):
    import pandas as pd

    chain = _read_chain(args.chain)
    data = _panel(args.holdout, age_offset=chain.age_offset, require_dob=chain.is_cohort)
    seed = _seed(args)
    run = Run(args, "predict")
    try:
        res = phi_quantities(data, chain, args.membership_draws, seed, args.max_draws, n_workers=_threads(args))
    except ValueError as exc:
        raise CLIError(EXIT_DATA, "data", str(exc)) from exc
    per = pd.DataFrame({"id": list(data.ids), "phi_i": res.phi_i})
    for j, lab in enumerate(data.item_labels):
        per[f"phi_ij[{lab}]"] = res.phi_ij[:, j]
    per.to_csv(run.path("phi_individual.csv"), index=False)
    with open(run.path("phi_summary.json"), "w") as fh:
        json.dump({"means": res.means(), "settings": res.settings}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.info.update(chain=str(args.chain), dataset_fingerprint=data.fingerprint())
    run.finish()


def build_parser():
    p = argparse.ArgumentParser(prog="tgom", description="Trajectory grade of membership models.")
    p.add_argument("--version", action="version", version=f"tgom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, threads=True):
        sp.add_argument("--out", required=True, help="output directory (created if needed)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed of all randomness (default: the config's sampler seed, else 0)")
        if threads:
            sp.add_argument("--threads", type=int, default=None,
                            help="worker threads (default: available cores); results do not depend on it")
        sp.add_argument("--quiet", action="store_true", help="no progress events")

    sp = sub.add_parser("simulate", help="simulate a panel from a generator spec (JSON)")
    sp.add_argument("spec")
    common(sp, threads=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run the sampler and write a chain file")
    sp.add_argument("data", help="panel CSV")
    sp.add_argument("--config", required=True, help="configuration JSON")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("summarize", help="posterior tables from a chain file")
    sp.add_argument("chain")
    sp.add_argument("--cohort", action="store_true", help="require the per-cohort table (cohort chains only)")
    sp.add_argument("--ages", default="65:105:0.5", help="age grid LO:HI:STEP for curve tables")
    sp.add_argument("--individuals", type=int, default=100, help="individual curves to tabulate")
    sp.add_argument("--no-relabel", action="store_true", help="keep the sampler's profile labels")
    common(sp, threads=False)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("cv", help="k-fold cross-validated predictive accuracy")
    sp.add_argument("data", help="panel CSV")
    sp.add_argument("--config", required=True, help="configuration JSON")
    sp.add_argument("--folds", type=int, default=None, help="override cv.folds")
    common(sp)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("predict", help="predictive accuracy of a chain on a holdout panel")
    sp.add_argument("chain")
    sp.add_argument("holdout", help="panel CSV of individuals not used in the fit")
    sp.add_argument("--membership-draws", type=int, default=20)
    sp.add_argument("--max-draws", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args.argv = argv
    try:
        args.func(args)
    except CLIError as exc:
        _emit({"event": "error", "exit_code": exc.code, "kind": exc.kind, "message": str(exc), **exc.extra})
        return exc.code
    except NumericalError as exc:
        _emit({"event": "error", "exit_code": EXIT_NUMERIC, "kind": "numerical", "message": str(exc),
               "dump": exc.dump})
        return EXIT_NUMERIC
    except OSError as exc:
        _emit({"event": "error", "exit_code": EXIT_IO, "kind": "io", "message": str(exc)})
        return EXIT_IO
    except ValueError as exc:
        _emit({"event": "error", "exit_code": EXIT_DATA, "kind": "data", "message": str(exc)})
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
