"""``finebalance`` command line: match, twostep, simulate, check.

Exit codes: 0 success, 1 input or config error, 2 infeasible design,
3 internal solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .balance import balance_report
from .cohort import Cohort, MatchConfig, kappa_max, read_cohort_csv
from .flow import InfeasibleFlow
from .network import (InfeasibleDesign, check_feasibility, match_to_json, one_shot_match,
                      write_match_csv)
from .sim import compare_methods, load_config, run_replications, summary_csv
from .twostep import two_step_match

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("finebalance")


class InputError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    seed: int | None = None
    threads: int = 1
    wall_clock_seconds: float = 0.0
    outputs: list[str] = field(default_factory=list)  # names relative to the output directory

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.outputs.append(path.name)
        path.write_text(json.dumps(self.__dict__, indent=2, default=str) + "\n")
        return path


class _Writer:
    """Writes files into the output directory and remembers their paths."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.out_dir = out_dir
        self.manifest = manifest

    def text(self, name: str, content: str) -> Path:
        path = self.out_dir / name
        path.write_text(content if content.endswith("\n") else content + "\n")
        self.manifest.outputs.append(name)
        return path

    def path(self, name: str) -> Path:
        path = self.out_dir / name
        self.manifest.outputs.append(name)
        return path


def _split(s: str | None) -> list[str] | None:
    if s is None:
        return None
    return [c.strip() for c in s.split(",") if c.strip()]


def _load_cohort(args) -> Cohort:
    path = Path(args.input)
    if not path.is_file():
        raise InputError(f"input file {str(path)!r} not found")
    return read_cohort_csv(path, args.fb_column, _split(args.covariates), _split(args.exclude) or (),
                           id_column=args.id_column, treated_column=args.treated_column)


def _match_config(args) -> MatchConfig:
    if args.kappa is not None and args.kappa_frac is not None:
        raise InputError("give at most one of --kappa and --kappa-frac")
    try:
        if args.kappa is not None:
            return MatchConfig(L=args.L, U=args.U, kappa=args.kappa)
        return MatchConfig(L=args.L, U=args.U,
                           kappa_frac=1 if args.kappa_frac is None else args.kappa_frac)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _check_kappa_range(cohort: Cohort, config: MatchConfig) -> None:
    """A kappa above kappa_max is a bad flag value, not an infeasible design."""
    if config.kappa is None or cohort.T == 0 or (cohort.N_b < cohort.n_b).any():
        return
    kmax = kappa_max(cohort)
    if config.kappa > kmax:
        raise InputError(f"kappa exceeds kappa_max ≈ {float(kmax):.4f} "
                         f"(kappa = {float(config.kappa):g})")


def cmd_match(args) -> int:
    t0 = time.perf_counter()
    cohort = _load_cohort(args)
    config = _match_config(args)
    _check_kappa_range(cohort, config)
    manifest = RunManifest("match", {**config.to_dict(), "metric": args.metric,
                                     "fb_column": args.fb_column,
                                     "covariates": list(cohort.covariate_names)},
                           {args.input: sha256_file(args.input)}, seed=args.seed,
                           threads=args.threads)
    out = _Writer(Path(args.out_dir), manifest)
    report = check_feasibility(cohort, config)
    out.text("feasibility.txt", report.format())
    if not report.ok:
        print(report.format(), file=sys.stderr)
        manifest.wall_clock_seconds = time.perf_counter() - t0
        manifest.write(out.out_dir)
        return EXIT_INFEASIBLE
    result = one_shot_match(cohort, None, config, metric=args.metric, engine=args.engine)
    write_match_csv(result, out.path("matched_sets.csv"))
    out.text("match.json", match_to_json(result))
    bal = balance_report(cohort, result, sd=args.sd)
    out.text("balance.json", bal.to_json())
    out.text("balance.txt", bal.format_table())
    print(bal.format_table())
    print(f"matched controls: {result.n_controls}, discarded: {len(result.discarded_controls)}")
    manifest.wall_clock_seconds = time.perf_counter() - t0
    manifest.write(out.out_dir)
    return EXIT_OK


def cmd_twostep(args) -> int:
    t0 = time.perf_counter()
    cohort = _load_cohort(args)
    manifest = RunManifest("twostep", {
        "fb_column": args.fb_column, "covariates": list(cohort.covariate_names),
        "propensity_covariates": _split(args.propensity_covariates),
        "fb_dummies": not args.no_fb_dummies, "k_cap": args.k_cap,
        "min_size": args.min_size, "metric": args.metric},
        {args.input: sha256_file(args.input)}, seed=args.seed, threads=args.threads)
    out = _Writer(Path(args.out_dir), manifest)
    ts = two_step_match(cohort, None, args.k_cap, args.min_size,
                        propensity_covariates=_split(args.propensity_covariates),
                        fb_dummies=not args.no_fb_dummies, metric=args.metric)
    out.text("trace.json", ts.trace_json())
    out.text("trace.txt", ts.format_trace())
    write_match_csv(ts.result, out.path("matched_sets.csv"))
    out.text("match.json", match_to_json(ts.result, {"pooled_tv": ts.pooled_tv}))
    bal = balance_report(cohort, ts.result, sd=args.sd)
    out.text("balance.json", bal.to_json())
    out.text("balance.txt", bal.format_table())
    print(ts.format_trace())
    print(bal.format_table())
    manifest.wall_clock_seconds = time.perf_counter() - t0
    manifest.write(out.out_dir)
    if ts.result.unmatched_treated:
        print(f"{len(ts.result.unmatched_treated)} treated units could not be matched",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    overrides = {}
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = type(config)(**{**config.to_dict(), **overrides,
                                 "kappa_fracs": tuple(config.kappa_fracs)})
    inputs = {}
    if Path(args.config).is_file():
        inputs[args.config] = sha256_file(args.config)
    manifest = RunManifest("simulate", config.to_dict(), inputs, seed=config.seed,
                           threads=args.threads)
    out = _Writer(Path(args.out_dir), manifest)
    run = run_replications(config, threads=args.threads)
    cmp_ = compare_methods(run)
    out.text("summary.csv", summary_csv(run.summaries))
    out.text("records.csv", run.records_csv())
    out.text("timings.csv", run.records_csv(include_timing=True))
    out.text("table2.txt", cmp_.format())
    print(cmp_.format())
    manifest.wall_clock_seconds = time.perf_counter() - t0
    manifest.write(out.out_dir)
    return EXIT_OK


def cmd_check(args) -> int:
    cohort = _load_cohort(args)
    config = _match_config(args)
    report = check_feasibility(cohort, config)
    print(report.format())
    return EXIT_OK if report.ok else EXIT_INFEASIBLE


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", help="cohort CSV with a header row")
    p.add_argument("--fb-column", required=True, help="nominal column to finely balance")
    p.add_argument("--covariates", help="comma-separated distance covariates (default: all numeric)")
    p.add_argument("--exclude", help="comma-separated columns never used as covariates")
    p.add_argument("--id-column", default="id")
    p.add_argument("--treated-column", default="treated")


def _add_match_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--L", type=int, default=1, help="minimum controls per treated unit")
    p.add_argument("--U", type=int, default=4, help="maximum controls per treated unit")
    p.add_argument("--kappa", help="target control-to-treated ratio, e.g. 1.2 or 6/5")
    p.add_argument("--kappa-frac", help="kappa as a fraction of kappa_max (default 1)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, default=None,
                   help="recorded in the manifest; matching itself is deterministic")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finebalance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="one-shot variable-ratio match with fine balance")
    _add_input_flags(p)
    _add_match_flags(p)
    p.add_argument("--metric", choices=["mahalanobis", "robust_mahalanobis"], default="mahalanobis")
    p.add_argument("--engine", choices=["priced", "literal"], default="priced")
    p.add_argument("--sd", choices=["pre", "post"], default="pre",
                   help="SMD denominator: pooled SD before matching or of the matched groups")
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("twostep", help="entire-number stratified 1-to-k matching")
    _add_input_flags(p)
    p.add_argument("--propensity-covariates", help="comma-separated (default: distance covariates)")
    p.add_argument("--no-fb-dummies", action="store_true",
                   help="leave the fine-balance levels out of the propensity model")
    p.add_argument("--k-cap", type=int, default=4)
    p.add_argument("--min-size", type=int, default=25)
    p.add_argument("--metric", choices=["mahalanobis", "robust_mahalanobis"], default="mahalanobis")
    p.add_argument("--sd", choices=["pre", "post"], default="pre")
    _add_common(p)
    p.set_defaults(func=cmd_twostep)

    p = sub.add_parser("simulate", help="replicated one-shot vs two-step comparison")
    p.add_argument("config", help="config file, or a bundled name (p03_mu025, p03_mu020)")
    p.add_argument("--replications", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="feasibility pre-flight for kappa, L and U")
    _add_input_flags(p)
    _add_match_flags(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleDesign as exc:
        if exc.report is not None:
            print(exc.report.format(), file=sys.stderr)
        else:
            print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InfeasibleFlow, RuntimeError, AssertionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
