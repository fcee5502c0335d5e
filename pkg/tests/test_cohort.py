from fractions import Fraction

import numpy as np
import pytest

from finebalance.cohort import (CohortError, MatchConfig, as_fraction, build_cohort,
                                discard_quotas, kappa_max, matched_quotas, read_cohort_csv)
from helpers import PANEL_A, counts_cohort

N_T = [t for t, _ in PANEL_A]
N_C = [c for _, c in PANEL_A]


def test_kappa_max_rhc_counts():
    k = kappa_max((N_T, N_C))
    assert k == Fraction(869, 675)
    assert round(float(k), 4) == 1.2874


def test_rhc_quotas_and_discards():
    k = kappa_max((N_T, N_C))
    assert matched_quotas((N_T, N_C), k).tolist() == [234, 137, 70, 145, 869, 79]
    M = discard_quotas((N_T, N_C), k)
    assert M.tolist() == [195, 30, 16, 13, 0, 16]
    assert int(M.sum()) == 270


def test_quota_identity_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_b = rng.integers(0, 30, 4)
        n_b[0] += 1
        N_b = n_b + rng.integers(0, 40, 4)
        kmax = kappa_max((n_b, N_b))
        if kmax < 1:
            continue
        k = 1 + (kmax - 1) * Fraction(int(rng.integers(0, 11)), 10)
        M = discard_quotas((n_b, N_b), k)
        q = matched_quotas((n_b, N_b), k)
        assert np.all(M >= 0)
        assert int(q.sum() + M.sum()) == int(N_b.sum())


def test_kappa_max_ignores_levels_without_treated():
    assert kappa_max(([2, 0], [5, 0])) == Fraction(5, 2)
    assert kappa_max(([1, 0], [1, 7])) == 1


def test_kappa_max_errors():
    with pytest.raises(CohortError, match="need N_b >= n_b"):
        kappa_max(([3], [2]))
    with pytest.raises(CohortError, match="no treated"):
        kappa_max(([0, 0], [1, 2]))


def test_discard_quotas_rejects_kappa_out_of_range():
    with pytest.raises(CohortError, match="outside"):
        discard_quotas(([2], [5]), 3)
    with pytest.raises(CohortError, match="outside"):
        discard_quotas(([2], [5]), Fraction(1, 2))


def test_as_fraction():
    assert as_fraction(0.9) == Fraction(9, 10)
    assert as_fraction("6/5") == Fraction(6, 5)
    assert as_fraction(2) == 2


def test_match_config_validation():
    with pytest.raises(ValueError, match="exactly one"):
        MatchConfig()
    with pytest.raises(ValueError, match="exactly one"):
        MatchConfig(kappa=1, kappa_frac=1)
    with pytest.raises(ValueError, match="L <= U"):
        MatchConfig(L=3, U=2, kappa_frac=1)
    with pytest.raises(ValueError, match=">= 1"):
        MatchConfig(kappa=0.5)
    cfg = MatchConfig(kappa_frac=0.9)
    c = counts_cohort(PANEL_A)
    assert cfg.resolve_kappa(c) == Fraction(9, 10) * Fraction(869, 675)


def test_build_cohort_levels_and_counts():
    recs = [
        {"id": "a", "treated": "1", "x": "1.5", "g": "10"},
        {"id": "b", "treated": "0", "x": "2", "g": "9"},
        {"id": "c", "treated": "0", "x": "0", "g": "10"},
        {"id": "d", "treated": "true", "x": "3", "g": "9"},
    ]
    c = build_cohort(recs, ["x"], "g")
    assert c.level_labels == ("9", "10")  # numeric labels sort numerically
    assert c.n_b.tolist() == [1, 1] and c.N_b.tolist() == [1, 1]
    assert c.T == 2 and c.C == 2 and c.B == 2


@pytest.mark.parametrize("rec, msg", [
    ({"id": "a", "treated": "1", "g": "1"}, "missing covariate"),
    ({"id": "a", "treated": "1", "x": "abc", "g": "1"}, "not numeric"),
    ({"id": "a", "treated": "maybe", "x": "1", "g": "1"}, "treat"),
    ({"id": "a", "treated": "1", "x": "1"}, "missing column 'g'"),
    ({"id": "a", "treated": "1", "x": "inf", "g": "1"}, "not finite"),
])
def test_build_cohort_errors(rec, msg):
    with pytest.raises(CohortError, match=msg):
        build_cohort([rec, {"id": "z", "treated": "0", "x": "0", "g": "1"}], ["x"], "g")


def test_duplicate_ids_rejected():
    recs = [{"id": "a", "treated": 1, "x": 1, "g": 1}, {"id": "a", "treated": 0, "x": 1, "g": 1}]
    with pytest.raises(CohortError, match="duplicate"):
        build_cohort(recs, ["x"], "g")


def test_level_with_treated_but_no_controls():
    recs = [{"id": "a", "treated": 1, "x": 1, "g": "A"}, {"id": "b", "treated": 0, "x": 1, "g": "B"}]
    with pytest.raises(CohortError, match="no controls"):
        build_cohort(recs, ["x"], "g")


def test_read_csv_autodetects_covariates(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,treated,age,site,ins\n1,1,30,north,A\n2,0,40,south,A\n3,0,50,north,B\n")
    c = read_cohort_csv(p, "ins")
    assert c.covariate_names == ("age",)
    assert c.categoricals["site"] == ("north", "south", "north")
    with pytest.raises(CohortError, match="'nope' not found"):
        read_cohort_csv(p, "nope")
    with pytest.raises(CohortError, match="covariate column 'zzz'"):
        read_cohort_csv(p, "ins", covariates=["zzz"])


def test_subset_keeps_level_coding():
    c = counts_cohort(PANEL_A)
    sub = c.subset(c.fb_level == 1)
    assert sub.B == 6 and sub.n_b.tolist() == [182, 0, 0, 0, 0, 0]
