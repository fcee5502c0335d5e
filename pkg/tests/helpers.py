"""Shared fixtures data and independent oracles for the test suite."""

from __future__ import annotations

import csv
import itertools
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from finebalance.cohort import Cohort, build_cohort
from finebalance.flow import FlowNetwork

INSURANCE = ("Medicaid", "Medicare", "Medicare & Medicaid", "No insurance", "Private",
             "Private & Medicare")

# Insurance counts (treated, control) for the under-65 cohort and two entire-number strata.
PANEL_A = ((182, 429), (107, 167), (55, 86), (113, 158), (675, 869), (62, 95))
PANEL_B = ((50, 141), (17, 46), (8, 18), (24, 38), (70, 127), (7, 15))
PANEL_C = ((3, 7), (0, 1), (0, 1), (1, 3), (1, 3), (0, 1))

RHC_CSV = Path(__file__).resolve().parent.parent / "data" / "rhc.csv"

# PASS / FAIL / NOT RUN lines from the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool | None, detail: str) -> bool | None:
    status = "NOT RUN" if ok is None else ("PASS" if ok else "FAIL")
    line = f"{status} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def counts_cohort(counts, p: int = 5, seed: int = 0, prefix: str = "", labels=INSURANCE,
                  fb_name: str = "ninsclas") -> Cohort:
    """Cohort with the given (treated, control) counts per level and random covariates."""
    rng = np.random.default_rng(seed)
    ids, z, lev = [], [], []
    for b, (nt, nc) in enumerate(counts, 1):
        for arm, n in ((1, nt), (0, nc)):
            for _ in range(n):
                ids.append(f"{prefix}{'t' if arm else 'c'}{len(ids):05d}")
                z.append(bool(arm))
                lev.append(b)
    X = rng.standard_normal((len(ids), p))
    return Cohort(tuple(ids), np.array(z), X, np.array(lev),
                  tuple(f"x{i + 1}" for i in range(p)), tuple(labels), fb_name=fb_name)


def sim_cohort(n=3000, p=0.3, mu=0.25, seed=0) -> Cohort:
    r = np.random.default_rng(seed)
    z = r.random(n) < p
    X = r.normal(size=(n, 5))
    X[z, 0] += mu
    lev = np.where(z, r.choice(3, n, p=[.07, .48, .45]), r.choice(3, n, p=[.1, .5, .4])) + 1
    return Cohort(tuple(f"u{i:05d}" for i in range(n)), z, X, lev,
                  tuple(f"C{i}" for i in range(1, 6)), ("1", "2", "3"), fb_name="C6")


def rhc_strata_cohort(seed: int = 0) -> tuple[Cohort, np.ndarray]:
    """Cohort with the full-cohort insurance counts, split into four
    entire-number strata whose [2,3) and [4,inf) parts have the published
    stratum counts. Returns the cohort and an entire number per unit.

    The (0,2) and [3,4) parts are not published beyond their treated totals
    (1005 and 8); their level mix here is one consistent choice.
    """
    s3 = ((2, 8), (1, 4), (1, 3), (1, 3), (2, 6), (1, 3))
    s1 = tuple((a[0] - b[0] - c[0] - d[0], a[1] - b[1] - c[1] - d[1])
               for a, b, c, d in zip(PANEL_A, PANEL_B, PANEL_C, s3))
    parts = [(s1, 1.5), (PANEL_B, 2.5), (s3, 3.5), (PANEL_C, 5.0)]
    rng = np.random.default_rng(seed)
    ids, z, lev, en = [], [], [], []
    for k, (counts, e) in enumerate(parts):
        for b, (nt, nc) in enumerate(counts, 1):
            for arm, n in ((1, nt), (0, nc)):
                for _ in range(n):
                    ids.append(f"s{k}{'t' if arm else 'c'}{len(ids):05d}")
                    z.append(bool(arm))
                    lev.append(b)
                    en.append(e)
    X = rng.standard_normal((len(ids), 4))
    cohort = Cohort(tuple(ids), np.array(z), X, np.array(lev), ("x1", "x2", "x3", "x4"),
                    INSURANCE, fb_name="ninsclas")
    return cohort, np.array(en)


def brute_force_match(cost: np.ndarray, t_level, c_level, L: int, U: int, kappa) -> int | None:
    """Minimum total cost over every assignment of controls to a treated unit
    or to the discard pile, subject to set sizes in [L, U] and matched level
    counts floor(kappa * n_b). None if no assignment qualifies."""
    T, C = cost.shape
    t_level, c_level = np.asarray(t_level), np.asarray(c_level)
    k = Fraction(kappa)
    # every assignment at once: row r sends control j to A[r, j] (T = discard)
    A = np.array(list(itertools.product(range(T + 1), repeat=C)), dtype=np.int64).reshape(-1, C)
    sizes = (A[:, :, None] == np.arange(T)).sum(axis=1)
    ok = (sizes >= L).all(axis=1) & (sizes <= U).all(axis=1)
    matched = A < T
    for b in set(t_level.tolist()) | set(c_level.tolist()):
        quota = math.floor(k * int((t_level == b).sum()))
        ok &= (matched & (c_level == b)).sum(axis=1) == quota
    if not ok.any():
        return None
    padded = np.vstack([cost, np.zeros((1, C), cost.dtype)])
    totals = padded[A[ok], np.arange(C)].sum(axis=1)
    return int(totals.min())


def random_network(rng, n=None, m=None, max_cap=5, max_cost=20) -> FlowNetwork:
    """Small random network with balanced supplies; may be infeasible."""
    n = n or int(rng.integers(2, 9))
    m = m or int(rng.integers(1, 3 * n))
    tail = rng.integers(0, n, m)
    head = rng.integers(0, n, m)
    keep = tail != head
    tail, head = tail[keep], head[keep]
    cap = rng.integers(0, max_cap + 1, len(tail))
    cost = rng.integers(0, max_cost + 1, len(tail))
    supply = np.zeros(n, np.int64)
    for _ in range(int(rng.integers(0, 4))):
        a, b = rng.choice(n, 2, replace=False)
        k = int(rng.integers(1, 4))
        supply[a] += k
        supply[b] -= k
    return FlowNetwork(n, tail, head, cap, cost, supply)


def write_cohort_csv(cohort: Cohort, path, categorical=None) -> None:
    categorical = categorical or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "treated", *cohort.covariate_names, cohort.fb_name, *categorical])
        for i, uid in enumerate(cohort.ids):
            w.writerow([uid, int(cohort.treated[i]), *(f"{v:.10g}" for v in cohort.X[i]),
                        cohort.level_labels[cohort.fb_level[i] - 1],
                        *(v[i] for v in categorical.values())])


def load_rhc(path=RHC_CSV) -> Cohort:
    """Under-65 RHC cohort from the public ``rhc.csv`` (column names as in the
    Vanderbilt distribution), with the covariates of the balance table."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if float(r["age"]) < 65]
    recs = []
    for i, r in enumerate(rows):
        age = float(r["age"])
        urin = r.get("urin1", "NA")
        miss = urin in ("", "NA")
        rec = {
            "id": r.get("ptid") or r.get("") or str(i),
            "treated": r["swang1"] == "RHC",
            "ninsclas": r["ninsclas"],
            "age_30_50": float(30 <= age < 51), "age_51_65": float(age >= 51),
            "male": float(r["sex"] == "Male"), "edu": float(r["edu"]),
            "race_black": float(r["race"] == "black"), "race_other": float(r["race"] == "other"),
            "inc_11_25": float(r["income"] == "$11-$25k"), "inc_25_50": float(r["income"] == "$25-$50k"),
            "inc_50": float(r["income"] == "> $50k"),
            "das": float(r["das2d3pc"]),
            "ca_yes": float(r["ca"] == "Yes"), "ca_meta": float(r["ca"] == "Metastatic"),
            "resp": float(r["resp1"]), "paco2": float(r["paco21"]), "temp": float(r["temp1"]),
            "urin": 0.0 if miss else float(urin), "urin_miss": float(miss),
            "wblc": float(r["wblc1"]), "sod": float(r["sod1"]), "pot": float(r["pot1"]),
            "renal": float(r["renalhx"]), "liver": float(r["liverhx"]),
        }
        recs.append(rec)
    names = [k for k in recs[0] if k not in ("id", "treated", "ninsclas")]
    return build_cohort(recs, names, "ninsclas")
