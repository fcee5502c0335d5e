"""One-shot variable-ratio matching with exact fine balance as a single min-cost flow.

Network layout (node order): treated tau_0..tau_{T-1}, controls
gamma_0..gamma_{C-1}, auxiliary nodes a_{b,k} (M_b per level, levels in
order), then Source, Sink, Overflow. Edge blocks, in order:

    Source -> tau        cap U        cost 0
    Source -> a_bk       cap 1        cost 0
    tau -> gamma         cap 1        cost round(cost_scale * delta)   (t-major)
    a_bk -> gamma        cap 1        cost 0   only for gamma at level b
    tau -> Overflow      cap U - L    cost 0
    gamma -> Sink        cap 1        cost 0

Source supplies U*T + sum(M_b); Sink absorbs C; Overflow absorbs the rest.
Auxiliary-to-control arcs of the wrong level (infinite cost) are never built.

Treated and control units are ordered by id; distance matrices passed to
``build_network`` must follow :func:`arm_order`. Ties between equally cheap
matches are settled by the solver's fixed scan order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .cohort import Cohort, MatchConfig, kappa_max, matched_quotas
from .distances import DistanceMatrix, mahalanobis_matrix, robust_mahalanobis_matrix
from .flow import FlowAssignment, FlowNetwork, InfeasibleFlow, solve

__all__ = [
    "InfeasibleDesign",
    "FeasibilityCheck",
    "FeasibilityReport",
    "MatchedSet",
    "MatchResult",
    "MatchNetwork",
    "arm_order",
    "check_feasibility",
    "build_network",
    "extract_match",
    "implied_flow",
    "solve_match_network",
    "one_shot_match",
    "distance_for",
    "validate_match",
    "write_match_csv",
    "match_to_json",
]


class InfeasibleDesign(Exception):
    """No variable-ratio match with fine balance exists for this setup."""

    def __init__(self, message: str, report: FeasibilityReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class FeasibilityCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class FeasibilityReport:
    checks: tuple[FeasibilityCheck, ...]
    kappa: Fraction | None
    kappa_max: Fraction | None
    levels: tuple[dict, ...]
    L: int
    U: int
    T: int
    C: int

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[FeasibilityCheck]:
        return [c for c in self.checks if not c.passed]

    def format(self) -> str:
        kmax = "n/a" if self.kappa_max is None else f"{float(self.kappa_max):.6f}"
        kap = "n/a" if self.kappa is None else f"{float(self.kappa):.6f}"
        lines = [f"T={self.T} C={self.C} L={self.L} U={self.U} kappa={kap} kappa_max={kmax}",
                 f"{'level':<24}{'n_b':>8}{'N_b':>8}{'quota':>8}{'M_b':>8}"]
        for lv in self.levels:
            q = "" if lv["quota"] is None else lv["quota"]
            m = "" if lv["discard"] is None else lv["discard"]
            lines.append(f"{lv['label']:<24}{lv['n_b']:>8}{lv['N_b']:>8}{q:>8}{m:>8}")
        for c in self.checks:
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "T": self.T, "C": self.C, "L": self.L, "U": self.U,
            "kappa": None if self.kappa is None else float(self.kappa),
            "kappa_max": None if self.kappa_max is None else float(self.kappa_max),
            "levels": list(self.levels),
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                       for c in self.checks],
        }


def check_feasibility(cohort: Cohort, config: MatchConfig) -> FeasibilityReport:
    """Pre-flight every counting condition a feasible design needs.

    Never raises; each condition is reported as pass/fail.
    """
    n_b, N_b = cohort.n_b, cohort.N_b
    T, C, L, U = cohort.T, cohort.C, int(config.L), int(config.U)
    labels = cohort.level_labels
    checks: list[FeasibilityCheck] = []

    checks.append(FeasibilityCheck("treated units", T > 0, f"T = {T}"))

    short = [f"{labels[b]!r}: {N_b[b]} < {n_b[b]}" for b in range(cohort.B) if N_b[b] < n_b[b]]
    checks.append(FeasibilityCheck(
        "controls per level (N_b >= n_b)", not short,
        "all levels" if not short else "; ".join(short)))

    kmax = kappa_max((n_b, N_b)) if T > 0 and not short else None
    if config.kappa is not None:
        kappa = config.kappa
    elif kmax is not None:
        kappa = config.kappa_frac * kmax
    else:
        kappa = None

    quotas = discards = None
    if kappa is not None:
        quotas = matched_quotas((n_b, N_b), kappa)
        discards = N_b - quotas
        in_range = kmax is not None and 1 <= kappa <= kmax
        detail = f"kappa = {float(kappa):.6g}"
        if kmax is not None:
            detail += f", kappa_max = {float(kmax):.6g}"
        checks.append(FeasibilityCheck("kappa in [1, kappa_max]", in_range, detail))
        over = [f"{labels[b]!r}: {N_b[b]} < {_fmt_kappa(kappa)}*{n_b[b]}"
                for b in range(cohort.B) if quotas[b] > N_b[b]]
        checks.append(FeasibilityCheck(
            "level quotas floor(kappa*n_b) <= N_b", not over,
            "all levels" if not over else "; ".join(over)))
        total = int(quotas.sum())
        checks.append(FeasibilityCheck(
            "matched controls >= L*T", total >= L * T,
            f"sum floor(kappa*n_b) = {total}, L*T = {L * T}"
            + ("" if total >= L * T else " (not enough controls to give every treated L)")))
        overflow = U * T + int(np.maximum(discards, 0).sum()) - C
        checks.append(FeasibilityCheck(
            "matched controls <= U*T", total <= U * T,
            f"sum floor(kappa*n_b) = {total}, U*T = {U * T}, Overflow demand = {overflow}"
            + ("" if total <= U * T else " (U too small)")))

    levels = tuple(
        {"label": labels[b], "n_b": int(n_b[b]), "N_b": int(N_b[b]),
         "quota": None if quotas is None else int(quotas[b]),
         "discard": None if discards is None else int(discards[b])}
        for b in range(cohort.B))
    return FeasibilityReport(tuple(checks), kappa, kmax, levels, L, U, T, C)


def _fmt_kappa(k: Fraction) -> str:
    return str(k.numerator) if k.denominator == 1 else f"{float(k):.4g}"


@dataclass(frozen=True)
class MatchedSet:
    treated_id: str
    control_ids: tuple[str, ...]


@dataclass(frozen=True)
class MatchResult:
    sets: tuple[MatchedSet, ...]
    discarded_controls: tuple[str, ...]
    total_distance: float
    kappa_used: Fraction | None
    config: MatchConfig | None
    total_cost: int = 0
    quota_table: tuple[dict, ...] = ()
    unmatched_treated: tuple[str, ...] = ()

    @property
    def matched_control_ids(self) -> list[str]:
        return [c for s in self.sets for c in s.control_ids]

    @property
    def n_controls(self) -> int:
        return sum(len(s.control_ids) for s in self.sets)

    @property
    def n_treated(self) -> int:
        return len(self.sets)

    def set_sizes(self) -> list[int]:
        return [len(s.control_ids) for s in self.sets]


def arm_order(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of treated and control units, each sorted by id."""
    ids = np.array(cohort.ids, dtype=object)
    t = np.flatnonzero(cohort.treated)
    c = np.flatnonzero(~cohort.treated)
    return t[np.argsort(ids[t], kind="stable")], c[np.argsort(ids[c], kind="stable")]


@dataclass(frozen=True, eq=False)
class MatchNetwork:
    """The literal matching network plus everything needed to read a flow back."""

    treated_ids: tuple[str, ...]
    control_ids: tuple[str, ...]
    control_level: np.ndarray
    discards: np.ndarray
    quotas: np.ndarray
    level_labels: tuple[str, ...]
    level_treated: np.ndarray
    level_controls: np.ndarray
    cost_matrix: np.ndarray
    kappa: Fraction
    config: MatchConfig

    @property
    def T(self) -> int:
        return len(self.treated_ids)

    @property
    def C(self) -> int:
        return len(self.control_ids)

    @property
    def n_aux(self) -> int:
        return int(self.discards.sum())

    @property
    def node_count(self) -> int:
        return self.T + self.C + self.n_aux + 3

    @property
    def source(self) -> int:
        return self.T + self.C + self.n_aux

    @property
    def sink(self) -> int:
        return self.source + 1

    @property
    def overflow(self) -> int:
        return self.source + 2

    @property
    def overflow_demand(self) -> int:
        return int(self.config.U) * self.T + self.n_aux - self.C

    @cached_property
    def _level_members(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.control_level == b) for b in range(1, len(self.level_labels) + 1)]

    @cached_property
    def edge_offsets(self) -> dict[str, int]:
        T, C, A = self.T, self.C, self.n_aux
        aux_edges = int(sum(int(m) * len(mem) for m, mem in zip(self.discards, self._level_members)))
        o = {"source_treated": 0, "source_aux": T, "pair": T + A}
        o["aux_control"] = o["pair"] + T * C
        o["treated_overflow"] = o["aux_control"] + aux_edges
        o["control_sink"] = o["treated_overflow"] + T
        o["end"] = o["control_sink"] + C
        return o

    @property
    def edge_count(self) -> int:
        return self.edge_offsets["end"]

    @cached_property
    def network(self) -> FlowNetwork:
        T, C, A = self.T, self.C, self.n_aux
        U, L = int(self.config.U), int(self.config.L)
        src, snk, ovf = self.source, self.sink, self.overflow
        aux_tail, aux_head = [], []
        node = T + C
        for m, mem in zip(self.discards, self._level_members):
            for _ in range(int(m)):
                aux_tail.append(np.full(len(mem), node))
                aux_head.append(mem + T)
                node += 1
        aux_tail = np.concatenate(aux_tail) if aux_tail else np.zeros(0, np.int64)
        aux_head = np.concatenate(aux_head) if aux_head else np.zeros(0, np.int64)
        tail = np.concatenate([
            np.full(T, src), np.full(A, src),
            np.repeat(np.arange(T), C), aux_tail,
            np.arange(T), np.arange(C) + T])
        head = np.concatenate([
            np.arange(T), np.arange(A) + T + C,
            np.tile(np.arange(C) + T, T), aux_head,
            np.full(T, ovf), np.full(C, snk)])
        cap = np.concatenate([
            np.full(T, U), np.ones(A), np.ones(T * C), np.ones(len(aux_tail)),
            np.full(T, U - L), np.ones(C)])
        cost = np.concatenate([
            np.zeros(T + A), self.cost_matrix.ravel(),
            np.zeros(len(aux_tail) + T + C)])
        supply = np.zeros(self.node_count, np.int64)
        supply[src] = U * T + A
        supply[snk] = -C
        supply[ovf] = -self.overflow_demand
        return FlowNetwork(self.node_count, tail, head, cap, cost, supply)


def build_network(cohort: Cohort, distance, config: MatchConfig) -> MatchNetwork:
    """Assemble the matching network for ``cohort``.

    ``distance`` is a T x C matrix (or DistanceMatrix) with rows and columns
    in :func:`arm_order`. Raises InfeasibleDesign when the counting conditions
    fail (kappa out of range, too few controls for L, U too small).
    """
    report = check_feasibility(cohort, config)
    if not report.ok:
        raise InfeasibleDesign(_failure_message(report), report)
    D = distance.values if isinstance(distance, DistanceMatrix) else np.asarray(distance, dtype=float)
    t_idx, c_idx = arm_order(cohort)
    if D.shape != (len(t_idx), len(c_idx)):
        raise ValueError(f"distance matrix shape {D.shape} != (T, C) = ({len(t_idx)}, {len(c_idx)})")
    if not np.all(np.isfinite(D)) or (D.size and D.min() < 0):
        raise ValueError("distances must be finite and nonnegative")
    scale = int(config.cost_scale)
    if D.size and D.max() * scale * (len(t_idx) + len(c_idx)) >= 2 ** 62:
        raise ValueError("cost_scale too large for 64-bit integer costs")
    kappa = report.kappa
    quotas = matched_quotas(cohort, kappa)
    return MatchNetwork(
        treated_ids=tuple(cohort.ids[i] for i in t_idx),
        control_ids=tuple(cohort.ids[i] for i in c_idx),
        control_level=cohort.fb_level[c_idx].copy(),
        discards=cohort.N_b - quotas,
        quotas=quotas,
        level_labels=cohort.level_labels,
        level_treated=cohort.n_b,
        level_controls=cohort.N_b,
        cost_matrix=np.rint(D * scale).astype(np.int64),
        kappa=kappa,
        config=config,
    )


def _failure_message(report: FeasibilityReport) -> str:
    return "infeasible design: " + "; ".join(f"{c.name} ({c.detail})" for c in report.failures)


def _quota_table(mnet: MatchNetwork) -> tuple[dict, ...]:
    return tuple(
        {"label": lab, "n_b": int(n), "N_b": int(N), "quota": int(q), "discard": int(m)}
        for lab, n, N, q, m in zip(mnet.level_labels, mnet.level_treated, mnet.level_controls,
                                   mnet.quotas, mnet.discards))


def _result_from_pairs(mnet: MatchNetwork, pair_mask: np.ndarray) -> MatchResult:
    sets = tuple(
        MatchedSet(mnet.treated_ids[t], tuple(mnet.control_ids[c] for c in np.flatnonzero(row)))
        for t, row in enumerate(pair_mask))
    used = pair_mask.any(axis=0)
    discarded = tuple(mnet.control_ids[c] for c in np.flatnonzero(~used))
    total = int(mnet.cost_matrix[pair_mask].sum())
    return MatchResult(
        sets=sets,
        discarded_controls=discarded,
        total_distance=total / mnet.config.cost_scale,
        kappa_used=mnet.kappa,
        config=mnet.config,
        total_cost=total,
        quota_table=_quota_table(mnet),
    )


def extract_match(assignment: FlowAssignment, mnet: MatchNetwork) -> MatchResult:
    """Read the matched sets off a feasible flow on the literal network.

    Sets are the treated-to-control arcs carrying flow; controls fed by an
    auxiliary node are the discarded ones.
    """
    o = mnet.edge_offsets
    flow = np.asarray(assignment.flow)
    pair = flow[o["pair"]:o["aux_control"]].reshape(mnet.T, mnet.C).astype(bool)
    result = _result_from_pairs(mnet, pair)
    aux_fed = np.zeros(mnet.C, bool)
    net = mnet.network
    sel = slice(o["aux_control"], o["treated_overflow"])
    fed = net.head[sel][flow[sel] > 0] - mnet.T
    aux_fed[fed] = True
    if not np.array_equal(aux_fed, ~pair.any(axis=0)):
        raise RuntimeError("flow does not route every control exactly once")
    return result


def implied_flow(result: MatchResult, mnet: MatchNetwork) -> FlowAssignment:
    """The literal-network flow corresponding to a match.

    Discarded controls at level b feed auxiliary nodes a_b1, a_b2, ... in
    control order.
    """
    o = mnet.edge_offsets
    T, C = mnet.T, mnet.C
    U = int(mnet.config.U)
    t_pos = {tid: i for i, tid in enumerate(mnet.treated_ids)}
    c_pos = {cid: j for j, cid in enumerate(mnet.control_ids)}
    flow = np.zeros(mnet.edge_count, np.int64)
    flow[o["source_treated"]:o["source_aux"]] = U
    flow[o["source_aux"]:o["pair"]] = 1
    counts = np.zeros(T, np.int64)
    for s in result.sets:
        t = t_pos[s.treated_id]
        for cid in s.control_ids:
            flow[o["pair"] + t * C + c_pos[cid]] = 1
            counts[t] += 1
    discarded = np.zeros(C, bool)
    for cid in result.discarded_controls:
        discarded[c_pos[cid]] = True
    base = o["aux_control"]
    for b, (m, mem) in enumerate(zip(mnet.discards, mnet._level_members)):
        chosen = np.flatnonzero(discarded[mem])
        if len(chosen) != m:
            raise ValueError(f"level {mnet.level_labels[b]!r}: {len(chosen)} discarded, quota {m}")
        for k, pos in enumerate(chosen):
            flow[base + k * len(mem) + pos] = 1
        base += int(m) * len(mem)
    flow[o["treated_overflow"]:o["control_sink"]] = U - counts
    flow[o["control_sink"]:o["end"]] = 1
    total = int(np.dot(flow[o["pair"]:o["aux_control"]], mnet.cost_matrix.ravel()))
    return FlowAssignment(flow, total)


def _compact_network(mnet: MatchNetwork, cand: np.ndarray):
    """Equivalent smaller network: one auxiliary node per level (cap M_b) and
    only the candidate treated-control arcs, which come last so the other arcs
    keep their positions as candidates are added."""
    T, C = mnet.T, mnet.C
    U, L = int(mnet.config.U), int(mnet.config.L)
    levels = [b for b in range(len(mnet.level_labels)) if mnet.discards[b] > 0]
    A = len(levels)
    aux_node = np.full(len(mnet.level_labels), -1, np.int64)
    aux_node[levels] = T + C + np.arange(A)
    src, snk, ovf = T + C + A, T + C + A + 1, T + C + A + 2
    pt, pc = np.nonzero(cand)
    ac = np.flatnonzero(aux_node[mnet.control_level - 1] >= 0)
    at = aux_node[mnet.control_level[ac] - 1]
    tail = np.concatenate([np.full(T, src), np.full(A, src), at, np.arange(T), np.arange(C) + T, pt])
    head = np.concatenate([np.arange(T), np.arange(A) + T + C, ac + T,
                           np.full(T, ovf), np.full(C, snk), pc + T])
    cap = np.concatenate([np.full(T, U), mnet.discards[levels].astype(np.int64),
                          np.ones(len(ac)), np.full(T, U - L), np.ones(C), np.ones(len(pt))])
    cost = np.concatenate([np.zeros(T + A + len(ac) + T + C, np.int64), mnet.cost_matrix[pt, pc]])
    supply = np.zeros(T + C + A + 3, np.int64)
    supply[src] = U * T + mnet.n_aux
    supply[snk] = -C
    supply[ovf] = -mnet.overflow_demand
    net = FlowNetwork(T + C + A + 3, tail, head, cap, cost, supply)
    return net, pt, pc


def _initial_candidates(cost: np.ndarray, k: int) -> np.ndarray:
    T, C = cost.shape
    cand = np.zeros((T, C), bool)
    if min(k, C) >= C or min(k, T) >= T:
        cand[:] = True
        return cand
    rows = np.argpartition(cost, k - 1, axis=1)[:, :k]
    cand[np.arange(T)[:, None], rows] = True
    cols = np.argpartition(cost, k - 1, axis=0)[:k, :]
    cand[cols, np.arange(C)[None, :]] = True
    return cand


def solve_match_network(mnet: MatchNetwork, *, engine: str = "priced",
                        candidates: int = 8, max_rounds: int = 100) -> MatchResult:
    """Minimum-total-distance match for a built network.

    ``engine="literal"`` solves the network exactly as laid out above.
    ``engine="priced"`` (default) reaches the same optimum faster: each
    level's auxiliary nodes collapse into one node of capacity M_b, the solve
    starts from the ``candidates`` cheapest arcs per treated and per control
    unit, and every omitted treated-control arc is then priced against the
    node potentials. Arcs with negative reduced cost join the candidate set and
    the solve resumes from the previous optimum, so the returned match is
    optimal for the full network.
    """
    if engine == "literal":
        try:
            assignment = solve(mnet.network)
        except InfeasibleFlow as exc:
            raise InfeasibleDesign(f"no feasible flow: {exc}") from exc
        return extract_match(assignment, mnet)
    if engine != "priced":
        raise ValueError(f"unknown engine {engine!r}")

    T, C = mnet.T, mnet.C
    cost = mnet.cost_matrix
    cand = _initial_candidates(cost, candidates)
    warm = None
    for _ in range(max_rounds):
        net, pt, pc = _compact_network(mnet, cand)
        n_fixed = net.edge_count - len(pt)
        try:
            sol = solve(net, warm_start=warm)
        except InfeasibleFlow:
            if cand.all():
                raise InfeasibleDesign("no feasible flow on the full network") from None
            cand[:] = True
            warm = None
            continue
        pair = np.zeros((T, C), bool)
        pair[pt, pc] = sol.flow[n_fixed:] > 0
        pi = sol.potential
        violating = (cost + pi[:T, None] - pi[None, T:T + C] < 0) & ~cand
        if not violating.any():
            return _result_from_pairs(mnet, pair)
        cand |= violating
        pt2, pc2 = np.nonzero(cand)
        warm = (np.concatenate([sol.flow[:n_fixed], pair[pt2, pc2].astype(np.int64)]), pi)
    raise RuntimeError("edge pricing did not converge")


def distance_for(cohort: Cohort, covariates: Sequence[str] | None = None,
                 metric: str = "mahalanobis") -> DistanceMatrix:
    """T x C distance matrix in :func:`arm_order`."""
    names = list(cohort.covariate_names if covariates is None else covariates)
    cols = [cohort.covariate_names.index(n) for n in names]
    t_idx, c_idx = arm_order(cohort)
    Xt, Xc = cohort.X[np.ix_(t_idx, cols)], cohort.X[np.ix_(c_idx, cols)]
    if metric == "mahalanobis":
        return mahalanobis_matrix(Xt, Xc, names)
    if metric == "robust_mahalanobis":
        return robust_mahalanobis_matrix(Xt, Xc, names)
    raise ValueError(f"unknown metric {metric!r}")


def one_shot_match(
    cohort: Cohort,
    covariates: Sequence[str] | None = None,
    config: MatchConfig | None = None,
    *,
    metric: str = "mahalanobis",
    distance=None,
    engine: str = "priced",
) -> MatchResult:
    """Distances, network, solve, extract.

    Raises InfeasibleDesign exactly when no match with set sizes in [L, U]
    and the fine-balance quotas exists.
    """
    config = config or MatchConfig(kappa_frac=1)
    report = check_feasibility(cohort, config)
    if not report.ok:
        raise InfeasibleDesign(_failure_message(report), report)
    if distance is None:
        distance = distance_for(cohort, covariates, metric)
    mnet = build_network(cohort, distance, config)
    return solve_match_network(mnet, engine=engine)


def validate_match(result: MatchResult, cohort: Cohort) -> None:
    """Raise AssertionError unless the structural and quota invariants hold."""
    L, U = int(result.config.L), int(result.config.U)
    level = dict(zip(cohort.ids, cohort.fb_level))
    treated = {i for i, z in zip(cohort.ids, cohort.treated) if z}
    controls = [i for i, z in zip(cohort.ids, cohort.treated) if not z]
    matched = result.matched_control_ids
    assert len(matched) == len(set(matched)), "control used twice"
    assert not set(matched) & set(result.discarded_controls), "control both matched and discarded"
    assert set(matched) | set(result.discarded_controls) == set(controls), "controls not covered"
    assert {s.treated_id for s in result.sets} == treated, "treated units not covered"
    for s in result.sets:
        assert L <= len(s.control_ids) <= U, f"set of {s.treated_id} has {len(s.control_ids)} controls"
    counts = np.bincount([level[c] for c in matched], minlength=cohort.B + 1)[1:]
    quotas = matched_quotas(cohort, result.kappa_used)
    assert np.array_equal(counts, quotas), f"level counts {counts.tolist()} != quotas {quotas.tolist()}"


def write_match_csv(result: MatchResult, path) -> None:
    """Rows of (set_id, role, unit_id); set ids follow treated id order."""
    with open(path, "w") as fh:
        fh.write("set_id,role,unit_id\n")
        for k, s in enumerate(result.sets, 1):
            fh.write(f"{k},treated,{s.treated_id}\n")
            for c in s.control_ids:
                fh.write(f"{k},control,{c}\n")


def match_to_json(result: MatchResult, extra: dict | None = None) -> str:
    sizes = result.set_sizes()
    doc = {
        "config": None if result.config is None else result.config.to_dict(),
        "kappa": None if result.kappa_used is None else {
            "exact": str(result.kappa_used), "value": float(result.kappa_used)},
        "totals": {
            "treated": result.n_treated,
            "matched_controls": result.n_controls,
            "discarded_controls": len(result.discarded_controls),
            "unmatched_treated": len(result.unmatched_treated),
            "total_distance": result.total_distance,
            "total_cost": result.total_cost,
            "set_sizes": {str(k): sizes.count(k) for k in sorted(set(sizes))},
        },
        "quota_table": list(result.quota_table),
        "sets": [{"treated": s.treated_id, "controls": list(s.control_ids)} for s in result.sets],
        "discarded_controls": list(result.discarded_controls),
        "unmatched_treated": list(result.unmatched_treated),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=False)
