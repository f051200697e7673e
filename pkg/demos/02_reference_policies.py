"""
Charging on arrival versus perfect foresight
=============================================

The same small day is scored three ways: charge-on-arrival (BAU), the
offline optimum (a min-cost flow) and exhaustive backward induction over the
aggregate decision tree.  The last two must agree.
"""

from datetime import date, datetime, timedelta

from evcoord import EpisodeDay, FleetConfig, Session, bau_rollout, dp_oracle, offline_optimum

cfg = FleetConfig(n_max=3, h_max_hours=12, slot_hours=2)
start = datetime(2015, 6, 1, 7)


def ev(name, arrive_slot, stay, charge):
    t = start + timedelta(hours=2 * (arrive_slot - 1))
    return Session(name, t, t + timedelta(hours=2 * stay), charge, 22.0 * charge, 11.0)


day = EpisodeDay(date(2015, 6, 1), (ev("a", 1, 6, 2), ev("b", 1, 3, 2), ev("c", 2, 2, 1), ev("d", 4, 3, 2)))

traj, bau = bau_rollout(day, cfg)
print("BAU load per slot:", [sum(tr.u) for tr in traj], "cost", bau)

sched, opt = offline_optimum(day, cfg)
print("optimal load per slot:", sched.loads.tolist(), "cost", opt)
print(sched.to_csv())

res = dp_oracle(day, cfg)
print("backward induction:", res.value, "over", res.nodes, "states")
print("BAU is", round(bau / opt, 3), "times the optimum")
