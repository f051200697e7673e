"""
The aggregate state and its actions
===================================

Two EVs share a group of two stations.  The day has three 2 h slots.
"""

import numpy as np

from evcoord import FleetConfig, bin_sessions, count_actions, enumerate_actions, step
from evcoord.mdp import diagonal_counts

cfg = FleetConfig(n_max=2, h_max_hours=6, slot_hours=2)

# each EV is (slots until departure, slots of charging still needed)
s = bin_sessions([(3, 2), (2, 1)], cfg)
print("state matrix (row = charge left, column = time left):")
print(s.x)

# the diagonal index is the slack: how many slots charging can still wait
print("EVs per slack class:", diagonal_counts(s))

# an action says how many EVs of each slack class charge now
print("actions:", enumerate_actions(diagonal_counts(s), 1))
print("size of a 10-class action set with 5 EVs each:", count_actions([5] * 10, 1))

# charge both: the load is (2/2)**2 = 1, the (3, 2) EV moves to (2, 1)
tr = step(s, (0, 2, 0))
print("cost", tr.cost)
print(tr.s_next.x)

# leave an EV without slack idle and it cannot finish any more
urgent = bin_sessions([(1, 1)], cfg)
tr = step(urgent, (0, 0, 0))
print("stranded:", tr.s_next.stranded, "penalty:", tr.cost)
assert np.isclose(tr.cost, cfg.penalty_weight / cfg.n_max)
