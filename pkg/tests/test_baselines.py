from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evcoord.baselines import (
    InfeasibleDayError,
    NodeBudgetExceeded,
    bau_rollout,
    dp_oracle,
    offline_optimum,
)
from evcoord.config import FleetConfig
from evcoord.sessions import EpisodeDay, duplicate_sessions, generate_synthetic
from oracles import brute_force_optimum, make_day, random_triples

FIG1 = FleetConfig(n_max=2, h_max_hours=6, slot_hours=2)
FIG1_DAY = [(1, 3, 2), (1, 2, 1)]  # (arrival slot, depart, charge)


def test_fig1_bau():
    traj, cost = bau_rollout(make_day(FIG1_DAY, FIG1), FIG1)
    assert [sum(tr.u) for tr in traj] == [2, 1, 0]
    assert cost == 1.25
    assert all(tr.s_next.stranded == 0 for tr in traj)


def test_fig1_optimum_and_dp():
    sched, cost = offline_optimum(make_day(FIG1_DAY, FIG1), FIG1)
    assert sched.loads.tolist() == [1, 1, 1]
    assert cost == 0.75
    res = dp_oracle(make_day(FIG1_DAY, FIG1), FIG1)
    assert res.value == 0.75
    value, action = res
    assert value == 0.75 and action in res.optimal_actions


def test_empty_day():
    day = EpisodeDay(date(2015, 1, 1))
    assert bau_rollout(day, FIG1)[1] == 0.0
    assert offline_optimum(day, FIG1)[1] == 0.0
    assert dp_oracle(day, FIG1).value == 0.0


def test_single_ev_two_optimal_actions():
    cfg = FleetConfig(n_max=1, h_max_hours=2, slot_hours=1)
    res = dp_oracle(make_day([(1, 2, 1)], cfg), cfg)
    assert res.value == 1.0
    assert sorted(res.optimal_actions) == [(0, 0), (0, 1)]


def test_two_car_scenario_and_duplication():
    cfg = FleetConfig(n_max=2, h_max_hours=4, slot_hours=1)
    day = make_day([(1, 4, 1), (1, 4, 1)], cfg)
    sched, cost = offline_optimum(day, cfg)
    assert sorted(sched.loads.tolist()) == [0, 0, 1, 1] and cost == 0.5
    assert dp_oracle(day, cfg).value == 0.5
    big = cfg.scaled(2)
    sched, cost = offline_optimum(duplicate_sessions(day, 2), big)
    assert sched.loads.tolist() == [1, 1, 1, 1] and cost == 0.25
    assert dp_oracle(duplicate_sessions(day, 2), big).value == 0.25


def test_schedule_csv():
    sched, _ = offline_optimum(make_day(FIG1_DAY, FIG1), FIG1)
    assert sched.to_csv() == "slot,charged_count\n1,1\n2,1\n3,1\n"
    # every session gets exactly its charge inside its window
    assert [len(s) for s in sched.ev_slots] == [2, 1]
    assert sched.ev_slots[1][0] <= 2


def test_infeasible_day():
    cfg = FleetConfig(n_max=2, h_max_hours=4, slot_hours=1)
    with pytest.raises(InfeasibleDayError):
        offline_optimum(make_day([(3, 2, 3)], cfg), cfg)


def test_node_budget():
    cfg = FleetConfig(n_max=4, h_max_hours=6, slot_hours=1)
    day = make_day([(1, 6, 2)] * 2 + [(2, 5, 1)] * 2, cfg)
    with pytest.raises(NodeBudgetExceeded):
        dp_oracle(day, cfg, max_nodes=3)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 4))
def test_oracles_agree_with_brute_force(seed, n_max, s_max):
    rng = np.random.default_rng(seed)
    cfg = FleetConfig(n_max=n_max, h_max_hours=s_max, slot_hours=1)
    triples = random_triples(rng, s_max, n_max, max_evs=4)
    day = make_day(triples, cfg)
    _, opt = offline_optimum(day, cfg)
    assert opt * n_max**2 == brute_force_optimum(triples, s_max)
    assert dp_oracle(day, cfg).value == opt
    _, bau = bau_rollout(day, cfg)
    assert opt <= bau + 1e-12


def test_bau_never_strands_on_synthetic_days():
    cfg = FleetConfig(n_max=6, h_max_hours=24, slot_hours=3)
    for day in generate_synthetic(20, cfg, seed=5):
        traj, bau = bau_rollout(day, cfg)
        assert all(tr.s_next.stranded == 0 for tr in traj)
        assert offline_optimum(day, cfg)[1] <= bau + 1e-12
