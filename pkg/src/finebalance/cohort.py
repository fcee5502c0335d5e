"""Study population, per-level counts, and the kappa / discard-quota arithmetic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CohortError",
    "Unit",
    "Cohort",
    "MatchConfig",
    "as_fraction",
    "build_cohort",
    "read_cohort_csv",
    "kappa_max",
    "discard_quotas",
    "matched_quotas",
]


class CohortError(ValueError):
    """Invalid input rows or an impossible fine-balance setup."""


def as_fraction(x: Any) -> Fraction:
    """Exact rational for counts-critical arithmetic.

    Floats go through their shortest repr, so ``0.9`` becomes ``9/10`` rather
    than the binary neighbour of 0.9.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise ValueError(f"not a finite number: {x!r}")
        return Fraction(repr(float(x)))
    return Fraction(str(x))


@dataclass(frozen=True)
class Unit:
    id: str
    treated: bool
    covariates: tuple[float, ...]
    fb_level: int


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable, validated study population.

    Arrays are row-aligned; ``fb_level`` holds dense codes ``1..B`` and
    ``level_labels[b - 1]`` is the original value of level ``b``. Units are
    kept in input order; matching sorts by id where order matters.
    ``categoricals`` carries extra non-numeric columns for reporting only.
    """

    ids: tuple[str, ...]
    treated: np.ndarray
    X: np.ndarray
    fb_level: np.ndarray
    covariate_names: tuple[str, ...]
    level_labels: tuple[str, ...]
    fb_name: str = "fb"
    categoricals: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        treated = np.asarray(self.treated, dtype=bool)
        X = np.asarray(self.X, dtype=float).reshape(len(self.ids), -1)
        lev = np.asarray(self.fb_level, dtype=np.int64)
        for arr in (treated, X, lev):
            arr.setflags(write=False)
        object.__setattr__(self, "treated", treated)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "fb_level", lev)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "level_labels", tuple(self.level_labels))
        n = len(self.ids)
        if len(set(self.ids)) != n:
            seen: set[str] = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise CohortError(f"duplicate unit id {dup!r}")
        if treated.shape != (n,) or lev.shape != (n,):
            raise CohortError("treated and fb_level must have one entry per unit")
        if X.shape[1] != len(self.covariate_names):
            raise CohortError(
                f"{X.shape[1]} covariate columns but {len(self.covariate_names)} names")
        if n and (lev.min() < 1 or lev.max() > len(self.level_labels)):
            raise CohortError("fine-balance level out of range 1..B")
        for name, vals in self.categoricals.items():
            if len(vals) != n:
                raise CohortError(f"categorical column {name!r} has wrong length")

    @property
    def B(self) -> int:
        return len(self.level_labels)

    @property
    def T(self) -> int:
        return int(self.treated.sum())

    @property
    def C(self) -> int:
        return int((~self.treated).sum())

    @property
    def n_b(self) -> np.ndarray:
        return np.bincount(self.fb_level[self.treated], minlength=self.B + 1)[1:]

    @property
    def N_b(self) -> np.ndarray:
        return np.bincount(self.fb_level[~self.treated], minlength=self.B + 1)[1:]

    @property
    def units(self) -> list[Unit]:
        return [
            Unit(uid, bool(z), tuple(float(v) for v in x), int(b))
            for uid, z, x, b in zip(self.ids, self.treated, self.X, self.fb_level)
        ]

    def __len__(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.covariate_names.index(name)]

    def subset(self, mask: np.ndarray) -> Cohort:
        """Sub-cohort keeping the full level coding (levels may become empty)."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return Cohort(
            ids=tuple(self.ids[i] for i in idx),
            treated=self.treated[idx],
            X=self.X[idx],
            fb_level=self.fb_level[idx],
            covariate_names=self.covariate_names,
            level_labels=self.level_labels,
            fb_name=self.fb_name,
            categoricals={k: tuple(v[i] for i in idx) for k, v in self.categoricals.items()},
        )

    def level_table(self) -> list[tuple[str, int, int]]:
        return [(lab, int(n), int(N)) for lab, n, N in zip(self.level_labels, self.n_b, self.N_b)]

    def check_fine_balance_possible(self) -> None:
        short = [(lab, n, N) for lab, n, N in self.level_table() if n > 0 and N == 0]
        if short:
            lab, n, _ = short[0]
            raise CohortError(
                f"level {lab!r} of {self.fb_name!r} has {n} treated and no controls; "
                "fine balance is impossible")


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def _parse_flag(value: Any, row: int) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer, float)) and value in (0, 1):
        return bool(value)
    s = str(value).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise CohortError(f"row {row}: treatment flag {value!r} is not 0/1")


def _level_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def build_cohort(
    records: Iterable[Mapping[str, Any]],
    covariate_names: Sequence[str],
    fb_column: str,
    *,
    id_column: str = "id",
    treated_column: str = "treated",
    categorical_columns: Sequence[str] = (),
    require_controls: bool = True,
) -> Cohort:
    """Validate raw rows and count units per fine-balance level.

    Levels are re-indexed densely as ``1..B`` in sorted label order (numeric
    labels sort numerically). With ``require_controls`` a level that has
    treated units but no controls raises CohortError.
    """
    ids: list[str] = []
    treated: list[bool] = []
    rows: list[list[float]] = []
    raw_levels: list[str] = []
    cats: dict[str, list[str]] = {c: [] for c in categorical_columns}
    for i, rec in enumerate(records, 1):
        for col in (id_column, treated_column, fb_column):
            if col not in rec or rec[col] is None or str(rec[col]).strip() == "":
                raise CohortError(f"row {i}: missing column {col!r}")
        ids.append(str(rec[id_column]).strip())
        treated.append(_parse_flag(rec[treated_column], i))
        vals = []
        for name in covariate_names:
            v = rec.get(name)
            if v is None or (isinstance(v, str) and v.strip() == ""):
                raise CohortError(f"row {i}: missing covariate {name!r}")
            try:
                fv = float(v)
            except (TypeError, ValueError):
                raise CohortError(f"row {i}: covariate {name!r} is not numeric: {v!r}") from None
            if not math.isfinite(fv):
                raise CohortError(f"row {i}: covariate {name!r} is not finite")
            vals.append(fv)
        rows.append(vals)
        lv = rec[fb_column]
        if isinstance(lv, float) and lv.is_integer():
            lv = int(lv)
        raw_levels.append(str(lv).strip())
        for c in categorical_columns:
            cats[c].append(str(rec.get(c, "")).strip())

    labels = sorted(set(raw_levels), key=_level_sort_key)
    code = {lab: k + 1 for k, lab in enumerate(labels)}
    cohort = Cohort(
        ids=tuple(ids),
        treated=np.array(treated, dtype=bool),
        X=np.array(rows, dtype=float).reshape(len(ids), len(covariate_names)),
        fb_level=np.array([code[v] for v in raw_levels], dtype=np.int64),
        covariate_names=tuple(covariate_names),
        level_labels=tuple(labels),
        fb_name=fb_column,
        categoricals={c: tuple(v) for c, v in cats.items()},
    )
    if require_controls:
        cohort.check_fine_balance_possible()
    return cohort


def _is_number(s: str) -> bool:
    try:
        return math.isfinite(float(s))
    except ValueError:
        return False


def read_cohort_csv(
    path,
    fb_column: str,
    covariates: Sequence[str] | None = None,
    exclude: Sequence[str] = (),
    *,
    id_column: str = "id",
    treated_column: str = "treated",
) -> Cohort:
    """Load a cohort from CSV with a header row.

    Without an explicit ``covariates`` list every column whose values are all
    numeric becomes a covariate, except id, treatment, the fine-balance column
    and anything in ``exclude``. Remaining non-numeric columns are carried as
    categoricals for balance reporting.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        records = list(reader)
    for col in (id_column, treated_column, fb_column):
        if col not in header:
            raise CohortError(f"column {col!r} not found in {path}")
    reserved = {id_column, treated_column, fb_column, *exclude}
    if covariates is None:
        covariates = [
            c for c in header
            if c not in reserved and records and all(_is_number(r[c]) for r in records)
        ]
    else:
        missing = [c for c in covariates if c not in header]
        if missing:
            raise CohortError(f"covariate column {missing[0]!r} not found in {path}")
    categorical = [c for c in header if c not in reserved and c not in covariates]
    return build_cohort(records, covariates, fb_column, id_column=id_column,
                        treated_column=treated_column, categorical_columns=categorical)


def _counts(obj) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(obj, Cohort):
        return obj.n_b, obj.N_b
    n_b, N_b = obj
    return np.asarray(n_b, dtype=np.int64), np.asarray(N_b, dtype=np.int64)


def kappa_max(cohort: Cohort | tuple[Sequence[int], Sequence[int]]) -> Fraction:
    """min over levels with treated units of N_b / n_b, as an exact rational.

    Accepts a Cohort or a ``(n_b, N_b)`` pair of count vectors.
    """
    n_b, N_b = _counts(cohort)
    ratios = []
    for b, (n, N) in enumerate(zip(n_b, N_b), 1):
        if N < n:
            raise CohortError(f"level {b}: {N} controls for {n} treated (need N_b >= n_b)")
        if n > 0:
            ratios.append(Fraction(int(N), int(n)))
    if not ratios:
        raise CohortError("no treated units")
    return min(ratios)


def matched_quotas(cohort, kappa) -> np.ndarray:
    """floor(kappa * n_b) per level: controls kept for matching."""
    n_b, _ = _counts(cohort)
    k = as_fraction(kappa)
    return np.array([math.floor(k * int(n)) for n in n_b], dtype=np.int64)


def discard_quotas(cohort, kappa) -> np.ndarray:
    """M_b = N_b - floor(kappa * n_b) for kappa in [1, kappa_max]."""
    n_b, N_b = _counts(cohort)
    k = as_fraction(kappa)
    kmax = kappa_max((n_b, N_b))
    if k < 1 or k > kmax:
        raise CohortError(
            f"kappa {float(k):.6g} outside [1, kappa_max = {float(kmax):.6g}]")
    return N_b - matched_quotas((n_b, N_b), k)


@dataclass(frozen=True)
class MatchConfig:
    """Set-size bounds and target ratio for a one-shot match.

    ``kappa`` is kept exact (Fraction). ``kappa_frac`` set instead means
    ``kappa = kappa_frac * kappa_max`` for whatever cohort the config is
    applied to; resolve with :meth:`resolve_kappa`.
    """

    L: int = 1
    U: int = 4
    kappa: Fraction | None = None
    kappa_frac: Fraction | None = None
    cost_scale: int = 100_000

    def __post_init__(self) -> None:
        if self.kappa is not None:
            object.__setattr__(self, "kappa", as_fraction(self.kappa))
        if self.kappa_frac is not None:
            object.__setattr__(self, "kappa_frac", as_fraction(self.kappa_frac))
        if (self.kappa is None) == (self.kappa_frac is None):
            raise ValueError("give exactly one of kappa and kappa_frac")
        if not (isinstance(self.L, (int, np.integer)) and isinstance(self.U, (int, np.integer))):
            raise ValueError("L and U must be integers")
        if not 1 <= self.L <= self.U:
            raise ValueError(f"need 1 <= L <= U, got L={self.L}, U={self.U}")
        if self.kappa is not None and self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {float(self.kappa)}")
        if self.kappa_frac is not None and self.kappa_frac <= 0:
            raise ValueError("kappa_frac must be positive")
        if int(self.cost_scale) <= 0:
            raise ValueError("cost_scale must be a positive integer")

    def resolve_kappa(self, cohort) -> Fraction:
        if self.kappa is not None:
            return self.kappa
        return self.kappa_frac * kappa_max(cohort)

    def to_dict(self) -> dict[str, Any]:
        return {
            "L": int(self.L),
            "U": int(self.U),
            "kappa": None if self.kappa is None else str(self.kappa),
            "kappa_frac": None if self.kappa_frac is None else str(self.kappa_frac),
            "cost_scale": int(self.cost_scale),
        }
