import json
from fractions import Fraction

import numpy as np
import pytest

from finebalance.cohort import Cohort, MatchConfig
from finebalance.flow import residual_has_negative_cycle, verify_flow
from finebalance.network import (InfeasibleDesign, arm_order, build_network, check_feasibility,
                                 implied_flow, match_to_json, one_shot_match, solve_match_network,
                                 validate_match, write_match_csv)
from helpers import PANEL_A, brute_force_match, counts_cohort, sim_cohort


def tiny_cohort(t_levels, c_levels, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"t{i}" for i in range(len(t_levels))] + [f"c{i}" for i in range(len(c_levels))]
    z = np.r_[np.ones(len(t_levels), bool), np.zeros(len(c_levels), bool)]
    lev = np.r_[t_levels, c_levels]
    B = int(lev.max())
    return Cohort(tuple(ids), z, rng.normal(size=(len(ids), 2)), lev, ("a", "b"),
                  tuple(str(b) for b in range(1, B + 1)))


def test_literal_network_layout():
    # T=2, C=5; level 1: 1 treated 3 controls, level 2: 1 treated 2 controls
    c = tiny_cohort([1, 2], [1, 1, 1, 2, 2])
    cfg = MatchConfig(L=1, U=3, kappa=2)
    D = np.arange(10, dtype=float).reshape(2, 5)
    mnet = build_network(c, D, cfg)
    assert mnet.quotas.tolist() == [2, 2] and mnet.discards.tolist() == [1, 0]
    assert mnet.node_count == 2 + 5 + 1 + 3
    net = mnet.network
    o = mnet.edge_offsets
    # T source arcs, 1 aux arc, T*C pair arcs, aux->3 controls of level 1, T overflow, C sink
    assert o == {"source_treated": 0, "source_aux": 2, "pair": 3, "aux_control": 13,
                 "treated_overflow": 16, "control_sink": 18, "end": 23}
    assert net.capacity[:2].tolist() == [3, 3]
    assert net.capacity[16:18].tolist() == [2, 2]  # U - L
    assert net.cost[3:13].tolist() == [int(x * 100_000) for x in range(10)]
    assert net.head[13:16].tolist() == [2, 3, 4]  # aux only reaches its own level
    assert net.supply[mnet.source] == 3 * 2 + 1
    assert net.supply[mnet.sink] == -5
    assert net.supply[mnet.overflow] == -(3 * 2 + 1 - 5)


def test_rhc_counts_network_size():
    c = counts_cohort(PANEL_A, p=2)
    mnet = build_network(c, np.zeros((c.T, c.C)), MatchConfig(L=1, U=4, kappa_frac=1))
    assert mnet.kappa == Fraction(869, 675)
    assert mnet.n_aux == 270
    assert mnet.node_count == 1194 + 1804 + 270 + 3


def test_hand_solved_instance():
    # one level; T=2, C=3, kappa=1 keeps 2 controls; costs force t0-c2, t1-c0
    c = tiny_cohort([1, 1], [1, 1, 1])
    D = np.array([[5.0, 4.0, 1.0], [1.0, 3.0, 2.0]])
    for engine in ("literal", "priced"):
        res = solve_match_network(build_network(c, D, MatchConfig(L=1, U=2, kappa=1)), engine=engine)
        assert [s.control_ids for s in res.sets] == [("c2",), ("c0",)]
        assert res.discarded_controls == ("c1",)
        assert res.total_distance == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(60))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 4))
    C = int(rng.integers(T, 7))
    B = int(rng.integers(1, 3))
    t_lev = rng.integers(1, B + 1, T)
    c_lev = np.r_[t_lev, rng.integers(1, B + 1, C - T)]
    c = tiny_cohort(t_lev, c_lev, seed)
    D = rng.integers(0, 20, (T, C)).astype(float)
    U = int(rng.integers(1, 4))
    kmax = min(Fraction(int((c.N_b[b])), int(c.n_b[b])) for b in range(c.B) if c.n_b[b])
    kappa = 1 + (kmax - 1) * Fraction(int(rng.integers(0, 5)), 4)
    cfg = MatchConfig(L=1, U=U, kappa=kappa, cost_scale=1)
    t_idx, c_idx = arm_order(c)
    want = brute_force_match(D.astype(np.int64), c.fb_level[t_idx], c.fb_level[c_idx], 1, U, kappa)
    if want is None:
        with pytest.raises(InfeasibleDesign):
            one_shot_match(c, config=cfg, distance=D)
        return
    for engine in ("literal", "priced"):
        res = one_shot_match(c, config=cfg, distance=D, engine=engine)
        assert res.total_cost == want
        validate_match(res, c)


def test_priced_equals_literal_on_simulated_cohorts():
    for seed in range(8):
        c = sim_cohort(90, seed=seed)
        for frac in (1, 0.9, 0.8):
            cfg = MatchConfig(kappa_frac=frac)
            if not check_feasibility(c, cfg).ok:
                continue
            a = one_shot_match(c, config=cfg, engine="literal")
            b = one_shot_match(c, config=cfg, engine="priced")
            assert a.total_cost == b.total_cost
            validate_match(a, c)
            validate_match(b, c)


def test_implied_flow_is_optimal_on_literal_network():
    c = sim_cohort(120, seed=11)
    cfg = MatchConfig(kappa_frac=1)
    from finebalance.network import distance_for
    mnet = build_network(c, distance_for(c), cfg)
    res = solve_match_network(mnet)
    fa = implied_flow(res, mnet)
    assert verify_flow(mnet.network, fa)
    assert fa.total_cost == res.total_cost
    assert not residual_has_negative_cycle(mnet.network, fa.flow)


def test_feasibility_diagnostics_name_the_level():
    c = counts_cohort(((24, 38), (70, 127)), labels=("No insurance", "Private"))
    rep = check_feasibility(c, MatchConfig(L=2, U=2, kappa=2))
    assert not rep.ok
    detail = " ".join(f.detail for f in rep.failures)
    assert "'No insurance': 38 < 2*24" in detail
    assert "'Private': 127 < 2*70" in detail


def test_feasibility_L_and_U():
    c = counts_cohort(((10, 12),))
    rep = check_feasibility(c, MatchConfig(L=2, U=4, kappa=1))
    assert [f.name for f in rep.failures] == ["matched controls >= L*T"]
    rep = check_feasibility(counts_cohort(((2, 12),)), MatchConfig(L=1, U=2, kappa=6))
    assert [f.name for f in rep.failures] == ["matched controls <= U*T"]
    assert "U too small" in rep.failures[0].detail


def test_feasibility_kappa_out_of_range():
    c = counts_cohort(PANEL_A)
    rep = check_feasibility(c, MatchConfig(kappa=5))
    assert "kappa in [1, kappa_max]" in [f.name for f in rep.failures]
    with pytest.raises(InfeasibleDesign, match="kappa_max = 1.2874"):
        one_shot_match(c, config=MatchConfig(kappa=5))


def test_rhc_count_reproduction_with_published_counts():
    c = counts_cohort(PANEL_A, p=5, seed=4)
    res = one_shot_match(c, config=MatchConfig(L=1, U=4, kappa_frac=1))
    validate_match(res, c)
    assert res.n_controls == 1534
    assert len(res.discarded_controls) == 270
    level = dict(zip(c.ids, c.fb_level))
    got = np.bincount([level[x] for x in res.matched_control_ids], minlength=7)[1:]
    assert got.tolist() == [234, 137, 70, 145, 869, 79]


def test_outputs(tmp_path):
    c = tiny_cohort([1, 1], [1, 1, 1])
    res = one_shot_match(c, config=MatchConfig(L=1, U=2, kappa=1), distance=np.ones((2, 3)))
    write_match_csv(res, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "set_id,role,unit_id" and len(lines) == 1 + 2 + 2
    doc = json.loads(match_to_json(res))
    assert doc["totals"]["matched_controls"] == 2
    assert doc["kappa"]["exact"] == "1"


def test_deterministic():
    c = sim_cohort(200, seed=5)
    a = one_shot_match(c)
    b = one_shot_match(c)
    assert a == b
