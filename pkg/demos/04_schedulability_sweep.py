"""
Runtime schedulability over a utilization sweep
===============================================

The fraction of generated task sets each scheduler runs without a miss,
for U/m from 0.5 to 1.0, on two preemptive processors with medium tasks.
Pass a checkpoint path (for instance the one written by the training demo)
as the first argument to add the neural scheduler. Medium sets can have
very long hyperperiods, so each trajectory is capped at 1000 slots.
"""

import sys

from schedlab.evaluation import ExperimentConfig, emit_plotdata, runtime_schedulability, summary

schedulers = ("GEDF", "GRM")
checkpoints = {}
if len(sys.argv) > 1:
    schedulers += ("neural",)
    checkpoints["neural"] = sys.argv[1]

cfg = ExperimentConfig(m=2, preemptive=True, cls="medium", sweep_points=5, sets_per_point=20, horizon_cap=1000,
                       schedulers=schedulers, checkpoints=checkpoints, seed=11)
res = runtime_schedulability(cfg)
print(summary(res))
print()
print(emit_plotdata(res), end="")
