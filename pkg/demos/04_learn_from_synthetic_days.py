"""
Learning a charging policy for ten stations
===========================================

Random rollouts on 60 synthetic days feed fitted Q-iteration with a small
neural network.  The learned policy is then scored on 20 unseen days, with
costs expressed relative to the perfect-foresight optimum (1.0 is optimal).

Takes about a minute at 2000 trajectories per day; lower TRAJECTORIES for a
quicker (and rougher) run.
"""

import logging
import tempfile
from pathlib import Path

from evcoord import (
    FleetConfig,
    MLP,
    MLPConfig,
    collect_experience,
    evaluate_policy,
    fitted_q_iteration,
    generate_synthetic,
)

logging.basicConfig(level=logging.INFO, format="%(message)s")

TRAJECTORIES = 2000
cfg = FleetConfig(n_max=10, h_max_hours=24, slot_hours=4)

days = generate_synthetic(80, cfg, seed=1)
train, test = days[:60], days[60:]
print("sessions per day:", sum(len(d.sessions) for d in days) / len(days))

f = collect_experience(train, cfg, TRAJECTORIES, seed=0)
policy = fitted_q_iteration(f, MLP(MLPConfig()), cfg.s_max)

report = evaluate_policy(policy, test, cfg, "learned")
s = report.summary()
print(f"charge on arrival: {s['c_bau']:.3f}")
print(f"learned policy:    {s['c_rl']:.3f}  ({s['stranded']} EVs left unfinished)")
print(f"optimum:           {s['c_opt']:.3f}")

# a saved policy reloads with Policy.load and acts identically
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "learned_policy.json"
    policy.save(path)
    print("saved to", path.name, "and", path.name + ".weights")
