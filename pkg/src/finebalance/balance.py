"""Balance diagnostics for a matched design: SMDs, TV distance, set structure."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cohort import Cohort
from .network import MatchResult

__all__ = [
    "SET_NAMES",
    "BalanceReport",
    "pooled_sd",
    "smd",
    "categorical_smd",
    "tv_distance",
    "set_structure",
    "balance_report",
]

SET_NAMES = {1: "pair", 2: "triplet", 3: "quadruplet", 4: "quintuplet", 5: "sextuplet"}


def pooled_sd(treated, control) -> float:
    """sqrt of the average of the two group variances (ddof=1)."""
    vt = np.var(np.asarray(treated, float), ddof=1) if len(treated) > 1 else 0.0
    vc = np.var(np.asarray(control, float), ddof=1) if len(control) > 1 else 0.0
    return math.sqrt((vt + vc) / 2)


def smd(treated, control, sd: float) -> float:
    """(mean treated - mean control) / sd; NaN when sd is not positive."""
    if not sd > 0:
        return float("nan")
    return (float(np.mean(treated)) - float(np.mean(control))) / sd


def _multinomial_cov(p: np.ndarray) -> np.ndarray:
    return np.diag(p) - np.outer(p, p)


def categorical_smd(t_counts, c_counts, ref_t=None, ref_c=None) -> float:
    """Mahalanobis-type composite SMD over level indicators.

    Difference of level proportions (first level dropped) scaled by the
    average of the two groups' multinomial covariances. The covariances come
    from ``ref_t``/``ref_c`` counts when given (e.g. the pre-match groups),
    otherwise from the compared groups themselves.
    """
    t = np.asarray(t_counts, float)
    c = np.asarray(c_counts, float)
    pt, pc = t / t.sum(), c / c.sum()
    rt = pt if ref_t is None else np.asarray(ref_t, float) / np.sum(ref_t)
    rc = pc if ref_c is None else np.asarray(ref_c, float) / np.sum(ref_c)
    d = (pt - pc)[1:]
    S = ((_multinomial_cov(rt) + _multinomial_cov(rc)) / 2)[1:, 1:]
    if not np.any(d):
        return 0.0
    return float(math.sqrt(max(d @ np.linalg.lstsq(S, d, rcond=None)[0], 0.0)))


def tv_distance(p_counts, q_counts) -> float:
    """Half the L1 distance between two normalised count vectors."""
    p = np.asarray(p_counts, float)
    q = np.asarray(q_counts, float)
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("count vectors must have positive totals")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def set_structure(result: MatchResult) -> dict[int, int]:
    """Number of matched sets by count of controls (1 = pair, 2 = triplet, ...)."""
    out: dict[int, int] = {}
    for k in result.set_sizes():
        out[k] = out.get(k, 0) + 1
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class BalanceReport:
    n_treated: int
    n_c_matched: int
    smd: dict[str, float]
    tv_fb: float
    fb_smd: float
    level_counts: tuple[tuple[str, int, int], ...]
    set_structure: dict[int, int]
    continuous: dict[str, tuple[float, float, float, float]]
    categorical: dict[str, dict] = field(default_factory=dict)
    fb_name: str = "fb"
    sd_convention: str = "pre"

    def to_dict(self) -> dict:
        return {
            "n_treated": self.n_treated,
            "n_controls_matched": self.n_c_matched,
            "sd_convention": self.sd_convention,
            "smd": {k: _clean(v) for k, v in self.smd.items()},
            "fine_balance": {
                "variable": self.fb_name,
                "tv_distance": self.tv_fb,
                "composite_smd": self.fb_smd,
                "levels": [{"level": lab, "treated": t, "control": c}
                           for lab, t, c in self.level_counts],
            },
            "categorical": self.categorical,
            "set_structure": {SET_NAMES.get(k, f"1-to-{k}"): v for k, v in self.set_structure.items()},
            "notes": [
                "SMD denominators: " + (
                    "pooled SD of the full cohort before matching" if self.sd_convention == "pre"
                    else "pooled SD of the matched groups"),
                "Categorical SMD: Mahalanobis-type composite over level indicators "
                "(reporting convention only)",
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        """Aligned text: Variable | Control | Treated | SMD."""
        rows = [("Variable", "Control", "Treated", "SMD"),
                ("n", str(self.n_c_matched), str(self.n_treated), "")]
        for name, (mc, sc, mt, st) in self.continuous.items():
            rows.append((name, f"{mc:.2f} ({sc:.2f})", f"{mt:.2f} ({st:.2f})",
                         _fmt_smd(self.smd.get(name))))
        for name, info in self.categorical.items():
            rows.append((f"{name} (%)", "", "", _fmt_smd(info["smd"])))
            for lab, t, c in info["levels"]:
                rows.append((f"  {lab}", _pct(c, self.n_c_matched), _pct(t, self.n_treated), ""))
        rows.append((f"{self.fb_name} (%)", "", "", _fmt_smd(self.fb_smd)))
        for lab, t, c in self.level_counts:
            rows.append((f"  {lab}", _pct(c, self.n_c_matched), _pct(t, self.n_treated), ""))
        rows.append((f"TV distance on {self.fb_name}", "", "", f"{self.tv_fb:.4f}"))
        rows.append(("Matched set structure", "", "", ""))
        for k, v in self.set_structure.items():
            rows.append((f"  {SET_NAMES.get(k, f'1-to-{k}')}", str(v), "", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join(
            "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
            for r in rows)


def _clean(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def _fmt_smd(v) -> str:
    return "undef" if v is None or math.isnan(v) else f"{abs(v):.3f}"


def _pct(k: int, n: int) -> str:
    return f"{k} ({100 * k / n:4.1f})" if n else str(k)


def _counts(labels: Sequence[str], idx: np.ndarray, levels: Sequence[str]) -> np.ndarray:
    pos = {lab: i for i, lab in enumerate(levels)}
    out = np.zeros(len(levels), np.int64)
    for i in idx:
        out[pos[labels[i]]] += 1
    return out


def balance_report(
    cohort: Cohort,
    result: MatchResult,
    covariates: Sequence[str] | None = None,
    *,
    sd: str = "pre",
) -> BalanceReport:
    """Balance of the treated units in ``result`` against their matched controls.

    ``sd="pre"`` scales every SMD by the pooled SD of the full cohort before
    matching; ``sd="post"`` uses the matched groups instead. Categorical
    columns carried by the cohort get count rows and a composite SMD.
    """
    if sd not in ("pre", "post"):
        raise ValueError("sd must be 'pre' or 'post'")
    names = list(cohort.covariate_names if covariates is None else covariates)
    row = {uid: i for i, uid in enumerate(cohort.ids)}
    t_idx = np.array([row[s.treated_id] for s in result.sets], dtype=np.int64)
    c_idx = np.array([row[c] for s in result.sets for c in s.control_ids], dtype=np.int64)
    all_t = np.flatnonzero(cohort.treated)
    all_c = np.flatnonzero(~cohort.treated)

    smds: dict[str, float] = {}
    continuous: dict[str, tuple[float, float, float, float]] = {}
    for name in names:
        x = cohort.column(name)
        xt, xc = x[t_idx], x[c_idx]
        denom = pooled_sd(x[all_t], x[all_c]) if sd == "pre" else pooled_sd(xt, xc)
        smds[name] = smd(xt, xc, denom) if len(xt) and len(xc) else float("nan")
        continuous[name] = (
            float(np.mean(xc)) if len(xc) else float("nan"),
            float(np.std(xc, ddof=1)) if len(xc) > 1 else float("nan"),
            float(np.mean(xt)) if len(xt) else float("nan"),
            float(np.std(xt, ddof=1)) if len(xt) > 1 else float("nan"))

    B = cohort.B
    lt = np.bincount(cohort.fb_level[t_idx], minlength=B + 1)[1:]
    lc = np.bincount(cohort.fb_level[c_idx], minlength=B + 1)[1:]
    tv = tv_distance(lt, lc) if lt.sum() and lc.sum() else float("nan")
    ref = (cohort.n_b, cohort.N_b) if sd == "pre" else (None, None)
    fb_smd = categorical_smd(lt, lc, *ref) if lt.sum() and lc.sum() else float("nan")

    categorical: dict[str, dict] = {}
    for name, labels in cohort.categoricals.items():
        levels = sorted(set(labels))
        ct = _counts(labels, t_idx, levels)
        cc = _counts(labels, c_idx, levels)
        if sd == "pre":
            rt, rc = _counts(labels, all_t, levels), _counts(labels, all_c, levels)
        else:
            rt = rc = None
        categorical[name] = {
            "smd": categorical_smd(ct, cc, rt, rc) if ct.sum() and cc.sum() else float("nan"),
            "levels": [(lab, int(a), int(b)) for lab, a, b in zip(levels, ct, cc)],
        }

    return BalanceReport(
        n_treated=len(t_idx),
        n_c_matched=len(c_idx),
        smd=smds,
        tv_fb=tv,
        fb_smd=fb_smd,
        level_counts=tuple((lab, int(a), int(b)) for lab, a, b in zip(cohort.level_labels, lt, lc)),
        set_structure=set_structure(result),
        continuous=continuous,
        categorical=categorical,
        fb_name=cohort.fb_name,
        sd_convention=sd,
    )
