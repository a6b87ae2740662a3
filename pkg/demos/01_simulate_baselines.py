"""
Simulating global EDF and RM
============================

Generate a heavy task set, run it under both fixed-rule schedulers and
look at the first few slots of the trace.
"""

from schedlab.model import Platform, hyperperiod, total_utilization
from schedlab.schedulers import GEDF, GRM
from schedlab.simulator import PERIODIC, run_trajectory
from schedlab.taskgen import GenSpec, generate_taskset

# three heavy tasks with U = 1.6 on two processors
tasks = generate_taskset(GenSpec(3, 1.6, "heavy", seed=0))
for t in tasks:
    print(f"task {t.id}: period {t.period:3d}  wcet {t.wcet:3d}  u = {t.wcet / t.period:.3f}")
print("U =", float(total_utilization(tasks)), " H =", hyperperiod(tasks))

platform = Platform.homogeneous(2)
for sched in (GEDF, GRM):
    trace = []
    v = run_trajectory(tasks, platform, sched, release_mode=PERIODIC, trace=trace)
    print(f"\n{sched}: {v.summary()}")
    for slot, proc, job, event in trace[:8]:
        print(f"  slot {slot:3d}  proc {proc:2d}  {job:>6}  {event}")
print()

# without preemption a started job holds its processor, which here happens to rescue GRM
for sched in (GEDF, GRM):
    v = run_trajectory(tasks, Platform.homogeneous(2, preemptive=False), sched, release_mode=PERIODIC)
    print(f"non-preemptive {sched}:", v.summary())
