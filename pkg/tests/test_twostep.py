import numpy as np
import pytest

from finebalance.balance import balance_report, set_structure
from finebalance.cohort import MatchConfig
from finebalance.network import InfeasibleDesign, one_shot_match
from finebalance.twostep import fixed_ratio_fb_match, stratify, stratum_k, two_step_match
from helpers import PANEL_B, PANEL_C, counts_cohort, rhc_strata_cohort, sim_cohort


def test_stratum_bins():
    en = np.array([0.1, 1.99, 2.0, 2.99, 3.0, 3.5, 4.0, 100.0])
    assert stratum_k(en, 4).tolist() == [1, 1, 2, 2, 3, 3, 4, 4]
    assert stratum_k(en, 2).tolist() == [1, 1, 2, 2, 2, 2, 2, 2]
    assert stratum_k(en, 1).tolist() == [1] * 8


def _cohort_with_entire(sizes):
    """sizes: units per stratum k=1..4; half treated (at least one)."""
    counts = []
    en = []
    for k, n in enumerate(sizes, 1):
        counts.append(n)
        en += [1.5 if k == 1 else k + 0.5] * n
    c = counts_cohort(((sum(sizes) // 3, sum(sizes) - sum(sizes) // 3),), labels=("a",))
    return c, np.array(en)


def test_small_top_stratum_merges_down():
    c, en = _cohort_with_entire([60, 60, 60, 20])
    strata, log = stratify(c, en, 4, 25)
    assert [s.label for s in strata] == ["(0,2)", "[2,3)", "[3,inf)"]
    assert strata[-1].size == 80 and strata[-1].attempted_k == 3
    assert log == ["merged stratum [4,inf) (20 units < 25) into [3,4)"]


def test_merging_cascades():
    c, en = _cohort_with_entire([60, 60, 10, 10])
    strata, log = stratify(c, en, 4, 25)
    assert [s.label for s in strata] == ["(0,2)", "[2,inf)"]
    assert strata[1].size == 80 and len(log) == 2


def test_lowest_stratum_never_merged_away():
    c, en = _cohort_with_entire([5, 60, 0, 0])
    strata, _ = stratify(c, en, 4, 25)
    # the highest non-empty stratum takes the open upper bound
    assert [s.label for s in strata] == ["(0,2)", "[2,inf)"]


def test_all_below_two_is_single_stratum():
    c, _ = _cohort_with_entire([30, 0, 0, 0])
    strata, log = stratify(c, np.full(30, 0.5), 4, 25)
    assert len(strata) == 1 and strata[0].label == "(0,inf)" and not log
    ts = two_step_match(c, entire=np.full(30, 0.5))
    assert set(set_structure(ts.result)) == {1}


def test_strata_partition_the_cohort():
    c = sim_cohort(600, seed=1)
    en = np.random.default_rng(0).uniform(0.2, 6, 600)
    strata, _ = stratify(c, en, 4, 25)
    ids = [u for s in strata for u in s.ids]
    assert sorted(ids) == sorted(c.ids)


def test_panel_b_pair_match_only():
    c = counts_cohort(PANEL_B, seed=1)
    with pytest.raises(InfeasibleDesign) as exc:
        fixed_ratio_fb_match(c, 2)
    assert "'No insurance': 38 < 2*24" in str(exc.value)
    res = fixed_ratio_fb_match(c, 1)
    assert set_structure(res) == {1: 176}


def test_panel_c_triplets():
    c = counts_cohort(PANEL_C, seed=2)
    for k in (4, 3):
        with pytest.raises(InfeasibleDesign):
            fixed_ratio_fb_match(c, k)
    assert set_structure(fixed_ratio_fb_match(c, 2)) == {2: 5}


def test_all_controls_used_when_counts_equal():
    c = counts_cohort(((4, 4), (3, 3)))
    res = fixed_ratio_fb_match(c, 1)
    assert res.n_controls == 7 and not res.discarded_controls


def test_rhc_shaped_two_step_structure():
    c, en = rhc_strata_cohort()
    ts = two_step_match(c, entire=en, min_size=0)
    assert set_structure(ts.result) == {1: 1181, 2: 5, 3: 8}
    assert ts.result.n_controls == 1215
    b = next(s for s in ts.strata if s.label == "[2,3)")
    assert (b.attempted_k, b.achieved_k) == (2, 1)
    assert [a.k for a in b.trace] == [2, 1]
    top = next(s for s in ts.strata if s.label == "[4,inf)")
    assert [a.feasible for a in top.trace] == [False, False, True]
    assert ts.pooled_tv > 0  # per-stratum fine balance does not survive pooling
    os_res = one_shot_match(c, config=MatchConfig(L=1, U=4, kappa_frac=1))
    assert os_res.n_controls == 1534 > ts.result.n_controls


def test_within_stratum_fine_balance_and_downgrade_monotone():
    c = sim_cohort(1500, seed=3)
    ts = two_step_match(c, propensity_covariates=["C1", "C2", "C3", "C4", "C5"], fb_dummies=False)
    level = dict(zip(c.ids, c.fb_level))
    treated_of = {m.treated_id: m for m in ts.result.sets}
    for s in ts.strata:
        if s.achieved_k is None:
            continue
        sets = [treated_of[u] for u in s.ids if u in treated_of]
        nt = np.bincount([level[m.treated_id] for m in sets], minlength=4)[1:]
        nc = np.bincount([level[x] for m in sets for x in m.control_ids], minlength=4)[1:]
        assert nc.tolist() == (s.achieved_k * nt).tolist()
        # every larger ratio was tried and found infeasible
        assert [a.k for a in s.trace] == list(range(s.attempted_k, s.achieved_k - 1, -1))
        assert all(not a.feasible for a in s.trace[:-1]) and s.trace[-1].feasible


def test_unmatched_treated_flagged():
    c = counts_cohort(((3, 1),), labels=("a",))
    en = np.full(len(c), 1.0)
    ts = two_step_match(c, entire=en)
    assert len(ts.result.unmatched_treated) == 3
    assert ts.downgrades == 1
    assert "no feasible ratio" in ts.log[-1]


def test_trace_json_and_text():
    c, en = rhc_strata_cohort()
    ts = two_step_match(c, entire=en, min_size=0)
    assert '"attempted_k": 2' in ts.trace_json()
    assert "[2,3)" in ts.format_trace()
    rep = balance_report(c, ts.result)
    assert rep.tv_fb == pytest.approx(ts.pooled_tv)
