"""Replicated simulation comparing one-shot and two-step matched designs."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .balance import balance_report
from .cohort import Cohort, MatchConfig
from .network import InfeasibleDesign, one_shot_match, validate_match
from .twostep import two_step_match

__all__ = [
    "ConfigError",
    "SimConfig",
    "RepRecord",
    "SimSummary",
    "SimRun",
    "parse_config",
    "load_config",
    "bundled_configs",
    "generate_dataset",
    "draw_dataset",
    "run_replication",
    "run_replications",
    "summarize",
    "compare_methods",
    "summary_csv",
    "table2_text",
]

log = logging.getLogger(__name__)

COVARIATES = ("C1", "C2", "C3", "C4", "C5")
TREATED_C6 = (0.07, 0.48, 0.45)
CONTROL_C6 = (0.10, 0.50, 0.40)
METRICS = ("smd_c1", "tv_c6", "n_c", "pairs", "triplets", "quadruplets", "quintuplets", "seconds")
MAX_REDRAWS = 1000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 3000
    p: float = 0.3
    mu: float = 0.25
    replications: int = 200
    seed: int = 20250101
    kappa_fracs: tuple[float, ...] = (1.0, 0.9, 0.8)
    L: int = 1
    U: int = 4
    k_cap: int = 4
    min_stratum_size: int = 25
    exclude_failures: bool = False

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ConfigError("n must be positive")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not self.kappa_fracs or any(not 0 < f <= 1 for f in self.kappa_fracs):
            raise ConfigError("kappa_fracs must be fractions in (0, 1]")
        if not 1 <= self.L <= self.U:
            raise ConfigError("need 1 <= L <= U")
        if self.k_cap < 1 or self.min_stratum_size < 0:
            raise ConfigError("k_cap must be >= 1 and min_stratum_size >= 0")

    @property
    def methods(self) -> tuple[str, ...]:
        return (*(method_name(f) for f in self.kappa_fracs), "TS")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kappa_fracs"] = list(self.kappa_fracs)
        return d


def method_name(frac: float) -> str:
    return "OS_kmax" if frac == 1 else f"OS_{frac:g}"


_PARSERS = {
    "n": int, "p": float, "mu": float, "replications": int, "seed": int,
    "L": int, "U": int, "k_cap": int, "min_stratum_size": int,
    "kappa_fracs": lambda s: tuple(float(x) for x in s.replace(",", " ").split()),
    "exclude_failures": lambda s: {"true": True, "false": False, "1": True, "0": False}[s.lower()],
}


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Unknown keys, repeated keys and bad values are reported as
    ``source:line: message``.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} "
                              f"(valid: {', '.join(sorted(_PARSERS))})")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        try:
            values[key] = _PARSERS[key](val)
        except (ValueError, KeyError):
            raise ConfigError(f"{source}:{lineno}: bad value {val!r} for {key!r}") from None
    try:
        return SimConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def bundled_configs() -> list[str]:
    root = resources.files("finebalance") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(name_or_path: str | Path) -> SimConfig:
    """Read a config file, or a bundled config by name (e.g. ``p03_mu025``)."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_config(path.read_text(), str(path))
    if str(name_or_path) in bundled_configs():
        res = resources.files("finebalance") / "configs" / f"{name_or_path}.cfg"
        return parse_config(res.read_text(), f"{name_or_path}.cfg")
    raise ConfigError(f"no config file or bundled config named {str(name_or_path)!r}")


def draw_dataset(config: SimConfig, rep: int) -> tuple[Cohort, int]:
    """Cohort for replication ``rep`` and the number of rejected draws.

    A draw where some level of C6 has more treated than controls cannot be
    finely balanced; it is discarded and the next sub-seed is used.
    """
    width = len(str(config.n - 1))
    ids = tuple(f"u{i:0{width}d}" for i in range(config.n))
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep, attempt]))
        z = rng.random(config.n) < config.p
        X = rng.standard_normal((config.n, 5))
        X[z, 0] += config.mu
        u = rng.random(config.n)
        lev = np.where(z, np.searchsorted(np.cumsum(TREATED_C6), u, side="right"),
                       np.searchsorted(np.cumsum(CONTROL_C6), u, side="right"))
        lev = np.minimum(lev, 2) + 1
        cohort = Cohort(ids, z, X, lev, COVARIATES, ("1", "2", "3"), fb_name="C6")
        if cohort.T > 0 and cohort.C > 0 and np.all(cohort.N_b >= cohort.n_b):
            if attempt:
                log.info("replication %d: %d draw(s) without feasible fine balance regenerated",
                         rep, attempt)
            return cohort, attempt
    raise RuntimeError(f"replication {rep}: no feasible draw in {MAX_REDRAWS} attempts")


def generate_dataset(config: SimConfig, rep: int) -> Cohort:
    """Pure function of (config, rep): Z ~ Bernoulli(p), C1..C5 normal, C6 in {1,2,3}."""
    return draw_dataset(config, rep)[0]


@dataclass
class RepRecord:
    rep: int
    method: str
    smd_c1: float = math.nan
    tv_c6: float = math.nan
    n_c: float = math.nan
    pairs: int = 0
    triplets: int = 0
    quadruplets: int = 0
    quintuplets: int = 0
    seconds: float = math.nan
    downgrades: int = 0
    unmatched_treated: int = 0
    redraws: int = 0
    quota_ok: bool | None = None
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _fill(rec: RepRecord, cohort: Cohort, result) -> None:
    rep = balance_report(cohort, result, ["C1"])
    rec.smd_c1 = rep.smd["C1"]
    rec.tv_c6 = rep.tv_fb
    rec.n_c = rep.n_c_matched
    s = rep.set_structure
    rec.pairs, rec.triplets, rec.quadruplets, rec.quintuplets = (s.get(k, 0) for k in (1, 2, 3, 4))


def run_replication(config: SimConfig, rep: int) -> list[RepRecord]:
    """All methods on one generated dataset, in ``config.methods`` order."""
    cohort, redraws = draw_dataset(config, rep)
    out = []
    for frac in config.kappa_fracs:
        rec = RepRecord(rep, method_name(frac), redraws=redraws)
        t0 = time.perf_counter()
        try:
            res = one_shot_match(cohort, COVARIATES,
                                 MatchConfig(L=config.L, U=config.U, kappa_frac=frac))
            rec.seconds = time.perf_counter() - t0
            try:
                validate_match(res, cohort)
                rec.quota_ok = True
            except AssertionError as exc:
                rec.quota_ok = False
                rec.error = f"invariant violated: {exc}"
            _fill(rec, cohort, res)
        except InfeasibleDesign as exc:
            rec.error = f"infeasible: {exc}"
        out.append(rec)

    rec = RepRecord(rep, "TS", redraws=redraws)
    t0 = time.perf_counter()
    ts = two_step_match(cohort, COVARIATES, config.k_cap, config.min_stratum_size,
                        propensity_covariates=COVARIATES, fb_dummies=False)
    rec.seconds = time.perf_counter() - t0
    rec.downgrades = ts.downgrades
    # a stratum with no feasible ratio leaves its treated unmatched; the
    # design is still complete, so this is flagged rather than a failure
    rec.unmatched_treated = len(ts.result.unmatched_treated)
    _fill(rec, cohort, ts.result)
    out.append(rec)
    return out


def _rep_worker(args):
    config, rep = args
    return run_replication(config, rep)


@dataclass(frozen=True)
class SimSummary:
    method: str
    replications: int
    n_used: int
    mean: dict[str, float]
    sd: dict[str, float]
    failures: int = 0
    downgrade_events: int = 0
    reps_with_downgrade: int = 0
    reps_with_unmatched: int = 0

    @property
    def sd_undefined(self) -> bool:
        return self.n_used < 2


@dataclass
class SimRun:
    config: SimConfig
    records: list[RepRecord]
    summaries: dict[str, SimSummary] = field(default_factory=dict)

    def by_method(self, method: str) -> list[RepRecord]:
        return [r for r in self.records if r.method == method]

    def records_csv(self, include_timing: bool = False) -> str:
        """Per-replication metrics; timings only on request (they are not reproducible)."""
        buf = io.StringIO()
        names = [f.name for f in fields(RepRecord) if include_timing or f.name != "seconds"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.records:
            w.writerow([_fmt(getattr(r, k)) for k in names])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def summarize(config: SimConfig, records: Sequence[RepRecord]) -> dict[str, SimSummary]:
    """Per-method means and SDs over replications, in replication order.

    A failed replication makes the method's aggregates NaN unless
    ``config.exclude_failures`` is set, in which case it is left out.
    """
    out = {}
    for method in config.methods:
        recs = sorted((r for r in records if r.method == method), key=lambda r: r.rep)
        failed = sum(r.failed for r in recs)
        used = [r for r in recs if not (config.exclude_failures and r.failed)]
        mean, sd = {}, {}
        for m in METRICS:
            vals = np.array([getattr(r, m) for r in used], dtype=float)
            if not len(vals) or (failed and not config.exclude_failures and m != "seconds"):
                mean[m] = sd[m] = math.nan
                continue
            mean[m] = float(vals.mean())
            sd[m] = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
        out[method] = SimSummary(
            method, len(recs), len(used), mean, sd, failed,
            downgrade_events=sum(r.downgrades for r in recs),
            reps_with_downgrade=sum(r.downgrades > 0 for r in recs),
            reps_with_unmatched=sum(r.unmatched_treated > 0 for r in recs))
    return out


def run_replications(config: SimConfig, threads: int = 1) -> SimRun:
    """Run every replication; results are reduced in replication order."""
    jobs = [(config, rep) for rep in range(config.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            batches = list(ex.map(_rep_worker, jobs))
    else:
        batches = [_rep_worker(j) for j in jobs]
    records = [r for batch in batches for r in batch]
    return SimRun(config, records, summarize(config, records))


@dataclass(frozen=True)
class Comparison:
    methods: tuple[str, ...]
    summaries: dict[str, SimSummary]
    dominance: dict[str, dict[str, float]]

    def format(self, include_timing: bool = True) -> str:
        return table2_text(self.summaries, self.dominance, include_timing)


def compare_methods(run: SimRun | Sequence[SimSummary],
                    records: Sequence[RepRecord] | None = None) -> Comparison:
    """Side-by-side summaries plus, per one-shot method, the fraction of
    replications in which it beats the two-step design on each metric."""
    if isinstance(run, SimRun):
        summaries = list(run.summaries.values())
        records = run.records
    else:
        summaries = list(run)
    reps = {s.replications for s in summaries}
    if len(reps) > 1:
        raise ValueError("summaries come from runs with different replication counts")
    by = {s.method: s for s in summaries}
    dominance: dict[str, dict[str, float]] = {}
    if records is not None and "TS" in by:
        ts = {r.rep: r for r in records if r.method == "TS"}
        for method in by:
            if method == "TS":
                continue
            pairs = [(r, ts[r.rep]) for r in records
                     if r.method == method and r.rep in ts and not r.failed and not ts[r.rep].failed]
            if not pairs:
                continue
            dominance[method] = {
                "n_c": float(np.mean([a.n_c > b.n_c for a, b in pairs])),
                "smd_c1": float(np.mean([abs(a.smd_c1) < abs(b.smd_c1) for a, b in pairs])),
                "tv_c6": float(np.mean([a.tv_c6 < b.tv_c6 for a, b in pairs])),
            }
    return Comparison(tuple(by), by, dominance)


def summary_csv(summaries: dict[str, SimSummary], include_timing: bool = False) -> str:
    """Long-format CSV: method, metric, mean, sd, n, sd_undefined.

    Wall-clock rows are left out unless asked for, so that a fixed seed and
    config give a byte-identical file.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "metric", "mean", "sd", "n", "sd_undefined"])
    for s in summaries.values():
        for m in METRICS:
            if m == "seconds" and not include_timing:
                continue
            w.writerow([s.method, m, _fmt(s.mean[m]), _fmt(s.sd[m]), s.n_used, int(s.sd_undefined)])
        w.writerow([s.method, "downgrade_events", s.downgrade_events, "", s.replications, ""])
        w.writerow([s.method, "reps_with_downgrade", s.reps_with_downgrade, "", s.replications, ""])
        w.writerow([s.method, "reps_with_unmatched", s.reps_with_unmatched, "", s.replications, ""])
        w.writerow([s.method, "failures", s.failures, "", s.replications, ""])
    return buf.getvalue()


_ROWS = (
    ("SMD_C1", "smd_c1", 1.0, "{:.2f}"),
    ("TV_C6 (x100)", "tv_c6", 100.0, "{:.2f}"),
    ("n_c", "n_c", 1.0, "{:.0f}"),
    ("Matched set structure", None, 0, ""),
    ("  Pair", "pairs", 1.0, "{:.0f}"),
    ("  Triplet", "triplets", 1.0, "{:.0f}"),
    ("  Quadruplet", "quadruplets", 1.0, "{:.0f}"),
    ("  Quintuplet", "quintuplets", 1.0, "{:.0f}"),
    ("Time (s)", "seconds", 1.0, "{:.1f}"),
)


def table2_text(summaries: dict[str, SimSummary],
                dominance: dict[str, dict[str, float]] | None = None,
                include_timing: bool = True) -> str:
    """Aligned mean (sd) table, one column per method. TV is shown x100."""
    methods = list(summaries)
    rows = [["Metric", *methods]]
    for label, key, scale, fmt in _ROWS:
        if key == "seconds" and not include_timing:
            continue
        if key is None:
            rows.append([label, *([""] * len(methods))])
            continue
        cells = []
        for m in methods:
            s = summaries[m]
            mu, sd = s.mean[key] * scale, s.sd[key] * scale
            cell = "n/a" if math.isnan(mu) else fmt.format(mu)
            cell += " (undef)" if math.isnan(sd) else " (" + fmt.format(sd) + ")"
            cells.append(cell)
        rows.append([label, *cells])
    rows.append(["TS downgrade events", *[
        str(summaries[m].downgrade_events) if m == "TS" else "" for m in methods]])
    rows.append(["Reps with unmatched treated", *[
        str(summaries[m].reps_with_unmatched) for m in methods]])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    reps = {s.replications for s in summaries.values()}
    lines.append(f"mean (sd) over {reps.pop() if len(reps) == 1 else '?'} replications")
    if any(s.sd_undefined for s in summaries.values()):
        lines.append("note: SDs undefined with fewer than two replications")
    for m, d in (dominance or {}).items():
        lines.append(f"{m} beats TS: n_c {d['n_c']:.0%}, |SMD_C1| {d['smd_c1']:.0%}, "
                     f"TV_C6 {d['tv_c6']:.0%} of replications")
    return "\n".join(lines)
