"""
How far a policy carries
========================

A policy learned for a small group is applied to groups 2, 4 and 8 times
larger by copying every session.  Because states and actions are fractions of
the group, the same network can act at any size.  The second half repeats a
small training-span sweep: more contiguous training days, lower and less
variable cost.
"""

from datetime import date

from evcoord import FleetConfig, SplitSpec, TrainSettings, generate_synthetic, run_scale_test, run_training_sweep, train_policy

cfg = FleetConfig(n_max=4, h_max_hours=24, slot_hours=4)
days = generate_synthetic(60, cfg, seed=21)

policy = train_policy(days[:40], cfg, 300, seed=0)
for rep in run_scale_test(policy, days[40:], [1, 2, 4, 8], cfg):
    print(f"scale {rep.extra['scale']} (n_max={rep.extra['n_max']}): C_RL {rep.c_rl:.3f}, C_BAU {rep.c_bau:.3f}")

spec = SplitSpec(date(2015, 2, 15), date(2015, 3, 1), train_spans=(1, 3), window_days=10, runs=3, seed=1)
grid = run_training_sweep(spec, [200], cfg, days, TrainSettings())
for band in grid.bands():
    print(f"span {band['span']} windows: mean {band['mean']:.3f} std {band['std']:.3f} "
          f"range [{band['min']:.3f}, {band['max']:.3f}]")
