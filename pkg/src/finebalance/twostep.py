"""Two-step baseline: stratify on the entire number, then a fixed-ratio
fine-balance match inside every stratum, downgrading k until feasible."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .balance import tv_distance
from .cohort import Cohort, MatchConfig
from .distances import PropensityModel, entire_numbers, fit_propensity
from .network import (InfeasibleDesign, MatchedSet, MatchResult, check_feasibility,
                      one_shot_match)

__all__ = [
    "Stratum",
    "StratumAttempt",
    "TwoStepResult",
    "stratum_k",
    "stratify",
    "fixed_ratio_fb_match",
    "two_step_match",
]


def _bound(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:g}"


@dataclass(frozen=True)
class StratumAttempt:
    k: int
    feasible: bool
    detail: str


@dataclass
class Stratum:
    """Units whose entire number falls in [lower, upper); the first stratum is (0, 2)."""

    k: int
    lower: float
    upper: float
    ids: tuple[str, ...]
    n_t: int
    n_c: int
    merged_from: tuple[str, ...] = ()
    attempted_k: int = 0
    achieved_k: int | None = None
    trace: list[StratumAttempt] = field(default_factory=list)
    fine_balanced: bool = False

    @property
    def label(self) -> str:
        left = "(" if self.lower == 0 else "["
        return f"{left}{_bound(self.lower)},{_bound(self.upper)})"

    @property
    def size(self) -> int:
        return self.n_t + self.n_c

    def to_dict(self) -> dict:
        return {
            "stratum": self.label,
            "n_treated": self.n_t,
            "n_controls": self.n_c,
            "merged_from": list(self.merged_from),
            "attempted_k": self.attempted_k,
            "achieved_k": self.achieved_k,
            "fine_balanced": self.fine_balanced,
            "trace": [{"k": a.k, "feasible": a.feasible, "detail": a.detail} for a in self.trace],
        }


def stratum_k(entire: np.ndarray, k_cap: int) -> np.ndarray:
    """Nominal ratio per unit: 1 on (0,2), k on [k,k+1), k_cap on [k_cap, inf)."""
    en = np.asarray(entire, dtype=float)
    k = np.where(en < 2, 1, np.floor(np.minimum(en, k_cap)))
    return np.clip(k, 1, k_cap).astype(np.int64)


def stratify(
    cohort: Cohort,
    model: PropensityModel | np.ndarray,
    k_cap: int = 4,
    min_size: int = 25,
) -> tuple[list[Stratum], list[str]]:
    """Bin units by entire number and merge small strata downwards.

    ``model`` is a fitted propensity model or a precomputed vector of entire
    numbers. Working from the top, a stratum with fewer than ``min_size``
    units joins the stratum just below it; the lowest stratum always stays.
    Returns the non-empty strata (lowest first) and a log of merge events.
    """
    if k_cap < 1:
        raise ValueError("k_cap must be >= 1")
    entire = model if isinstance(model, np.ndarray) else entire_numbers(model, cohort)[0]
    if len(entire) != len(cohort):
        raise ValueError("one entire number per unit is required")
    ks = stratum_k(entire, k_cap)
    members = {k: np.flatnonzero(ks == k) for k in range(1, k_cap + 1)}
    uppers = {k: (2.0 if k == 1 else k + 1.0) for k in range(1, k_cap + 1)}
    uppers[k_cap] = math.inf
    merged: dict[int, list[str]] = {k: [] for k in members}
    log: list[str] = []
    for k in range(k_cap, 1, -1):
        size = len(members[k])
        if size >= min_size:
            continue
        if size:
            src = Stratum(k, float(k), uppers[k], (), 0, 0).label
            dst = Stratum(k - 1, 0.0 if k - 1 == 1 else float(k - 1), uppers[k - 1], (), 0, 0).label
            log.append(f"merged stratum {src} ({size} units < {min_size}) into {dst}")
            merged[k - 1] += [src, *merged[k]]
        members[k - 1] = np.sort(np.concatenate([members[k - 1], members[k]]))
        uppers[k - 1] = uppers[k]
        members[k] = members[k][:0]

    strata = []
    for k in range(1, k_cap + 1):
        idx = members[k]
        if not len(idx):
            continue
        z = cohort.treated[idx]
        strata.append(Stratum(
            k=k, lower=0.0 if k == 1 else float(k), upper=uppers[k],
            ids=tuple(cohort.ids[i] for i in idx),
            n_t=int(z.sum()), n_c=int((~z).sum()),
            merged_from=tuple(merged[k]), attempted_k=k))
    return strata, log


def fixed_ratio_fb_match(
    stratum: Cohort,
    k: int,
    covariates: Sequence[str] | None = None,
    *,
    metric: str = "mahalanobis",
) -> MatchResult:
    """Optimal 1-to-k match with fine balance (L = U = kappa = k).

    Raises InfeasibleDesign when some level has fewer than k controls per
    treated unit, or the stratum has no treated units.
    """
    return one_shot_match(stratum, covariates, MatchConfig(L=k, U=k, kappa=k), metric=metric)


@dataclass(frozen=True)
class TwoStepResult:
    result: MatchResult
    strata: tuple[Stratum, ...]
    log: tuple[str, ...]
    pooled_tv: float
    model: PropensityModel | None = None

    @property
    def downgrades(self) -> int:
        """Strata whose achieved ratio is below the one attempted."""
        return sum(1 for s in self.strata
                   if s.n_t and (s.achieved_k is None or s.achieved_k < s.attempted_k))

    def trace_json(self) -> str:
        return json.dumps({
            "strata": [s.to_dict() for s in self.strata],
            "log": list(self.log),
            "pooled_tv": self.pooled_tv,
            "downgrades": self.downgrades,
            "unmatched_treated": list(self.result.unmatched_treated),
        }, indent=2)

    def format_trace(self) -> str:
        lines = []
        for s in self.strata:
            got = "none" if s.achieved_k is None else f"1-to-{s.achieved_k}"
            lines.append(f"{s.label:<10} n_t={s.n_t:<5} n_c={s.n_c:<5} "
                         f"attempted 1-to-{s.attempted_k}, achieved {got}")
            for a in s.trace:
                lines.append(f"    k={a.k}: {'feasible' if a.feasible else 'infeasible'}"
                             + ("" if a.feasible else f" ({a.detail})"))
        lines += self.log
        lines.append(f"pooled TV distance: {self.pooled_tv:.4f}")
        return "\n".join(lines)


def two_step_match(
    cohort: Cohort,
    covariates: Sequence[str] | None = None,
    k_cap: int = 4,
    min_size: int = 25,
    *,
    propensity_covariates: Sequence[str] | None = None,
    fb_dummies: bool = True,
    model: PropensityModel | None = None,
    entire: np.ndarray | None = None,
    metric: str = "mahalanobis",
) -> TwoStepResult:
    """Entire-number stratification followed by per-stratum 1-to-k matching.

    In a stratum with nominal ratio k, ratios k, k-1, ..., 1 are tried in
    turn and the first feasible one is used. Distances are computed within
    each stratum. Treated units of a stratum where even pair matching is
    infeasible are reported in ``unmatched_treated``.
    """
    log: list[str] = []
    if entire is None:
        if model is None:
            model = fit_propensity(cohort, propensity_covariates, fb_dummies=fb_dummies)
        entire, clipped = entire_numbers(model, cohort)
        if clipped.any():
            log.append(f"{int(clipped.sum())} propensity scores clipped away from 0 and 1")
    strata, merge_log = stratify(cohort, np.asarray(entire, float), k_cap, min_size)
    log += merge_log

    row = {uid: i for i, uid in enumerate(cohort.ids)}
    sets: list[MatchedSet] = []
    unmatched: list[str] = []
    total = 0.0
    cost = 0
    for s in strata:
        mask = np.zeros(len(cohort), dtype=bool)
        mask[[row[u] for u in s.ids]] = True
        sub = cohort.subset(mask)
        if s.n_t == 0:
            log.append(f"stratum {s.label} has no treated units; its {s.n_c} controls are discarded")
            continue
        for k in range(s.attempted_k, 0, -1):
            report = check_feasibility(sub, MatchConfig(L=k, U=k, kappa=k))
            detail = "; ".join(f"{c.name}: {c.detail}" for c in report.failures)
            s.trace.append(StratumAttempt(k, report.ok, detail))
            if not report.ok:
                if k > 1:
                    log.append(f"stratum {s.label}: 1-to-{k} infeasible, trying 1-to-{k - 1}")
                continue
            try:
                res = fixed_ratio_fb_match(sub, k, covariates, metric=metric)
            except InfeasibleDesign as exc:  # pragma: no cover - pre-check mirrors the solver
                s.trace[-1] = StratumAttempt(k, False, str(exc))
                continue
            s.achieved_k = k
            s.fine_balanced = True
            sets += res.sets
            total += res.total_distance
            cost += res.total_cost
            break
        if s.achieved_k is None:
            ids_t = [u for u in s.ids if cohort.treated[row[u]]]
            unmatched += ids_t
            log.append(f"stratum {s.label}: no feasible ratio; {len(ids_t)} treated units left unmatched")

    sets.sort(key=lambda m: m.treated_id)
    matched = {c for m in sets for c in m.control_ids}
    discarded = tuple(sorted(u for u, z in zip(cohort.ids, cohort.treated)
                             if not z and u not in matched))
    result = MatchResult(
        sets=tuple(sets), discarded_controls=discarded, total_distance=total,
        kappa_used=None, config=None, total_cost=cost,
        unmatched_treated=tuple(sorted(unmatched)))

    B = cohort.B
    lt = np.bincount(np.array([cohort.fb_level[row[m.treated_id]] for m in sets], dtype=np.int64),
                     minlength=B + 1)[1:]
    lc = np.bincount(np.array([cohort.fb_level[row[c]] for m in sets for c in m.control_ids],
                              dtype=np.int64), minlength=B + 1)[1:]
    tv = tv_distance(lt, lc) if lt.sum() and lc.sum() else float("nan")
    return TwoStepResult(result, tuple(strata), tuple(log), tv, model)
