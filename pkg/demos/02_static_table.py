"""
Searching for a static schedule table
=====================================

On a tiny non-preemptive uniprocessor set, non-preemptive EDF misses a
deadline even though a valid schedule exists. Tree search over job
choices finds one, and the table replays cleanly.
"""

from schedlab import nn
from schedlab.encoding import mode_of
from schedlab.model import Platform, TaskSpec
from schedlab.nn import NetConfig
from schedlab.schedulers import GEDF, generate_static_table, replay_table
from schedlab.simulator import PERIODIC, run_trajectory

tasks = [TaskSpec(0, 12, 1), TaskSpec(1, 24, 6), TaskSpec(2, 4, 1)]
platform = Platform.homogeneous(1, preemptive=False)

print("non-preemptive EDF:", run_trajectory(tasks, platform, GEDF, release_mode=PERIODIC).summary())

# an untrained network is enough here; it is trained between failed rollouts
params = nn.init_params(NetConfig(m=1, capacity=8, n_hist=2, mode=mode_of(platform), filters=16, blocks=2,
                                  hidden=16), seed=0)
res = generate_static_table(tasks, platform, params, rollout_threshold=5000)
print(f"search: ok={res.ok} after {res.rollouts} rollouts")
print(res.table.to_text())
print("replay:", replay_table(res.table, tasks).summary())

# dropping one assignment breaks it
slot = min(res.table.slots)
res.table.slots.pop(slot)
print("after removing slot", slot, "->", replay_table(res.table, tasks).summary())
