"""
Fitted Q-iteration with a lookup table
======================================

With every state-action pair of a day in the batch and an exact table as the
regressor, fitted Q-iteration is plain backward induction, so the greedy
policy must reach the optimum.
"""

from datetime import date

from evcoord import FleetConfig, ExactTable, collect_exhaustive, dp_oracle, fitted_q_iteration, rollout
from evcoord.mdp import trajectory_cost
from evcoord.sessions import generate_synthetic

cfg = FleetConfig(n_max=3, h_max_hours=24, slot_hours=4)
day = generate_synthetic(1, cfg, seed=5, start_date=date(2015, 2, 1))[0]
print(len(day.sessions), "sessions:", day.slot_triples(cfg))

f = collect_exhaustive(day, cfg)
print(len(f), "state-action pairs")

policy = fitted_q_iteration(f, ExactTable(), cfg.s_max)
traj = rollout(day.arrivals_by_slot(cfg), cfg, policy)
for tr in traj:
    print(f"t={tr.s.t} charge {tr.u} cost {tr.cost:.4f}")
print("greedy return", trajectory_cost(traj), "optimum", dp_oracle(day, cfg).value)
