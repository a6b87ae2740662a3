"""
A short policy-iteration run
============================

Train a small network by search-guided self-simulation on a handful of
medium-utilization preemptive task sets, then compare it with GEDF on
held-out sets. Medium sets have enough tasks that most slots hold a real
choice; with heavy sets on two processors almost every decision is forced
and there is little to learn from. On one core this takes about ten
minutes. With seed 1 the held-out score rose from 0.05 to 0.25, still far
below GEDF; the budget here is tiny.
"""

import logging

from schedlab import nn
from schedlab.schedulers import GEDF
from schedlab.training import TrainConfig, policy_iteration, schedulability, training_sets

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = TrainConfig(m=2, preemptive=True, cls="medium", lo_frac=0.7, hi_frac=0.9,
                  filters=16, blocks=3, hidden=32,
                  iterations=4, rollouts=8, updates_per_iteration=40, batch_size=32,
                  train_horizon=300, eval_horizon=300, max_rollout_slots=30,
                  train_sets=8, validation_sets=20, patience=None, seed=1)
train, val = training_sets(cfg)
print(f"{len(train)} training sets, {len(val)} validation sets")

progress = []
ckpts = policy_iteration(train, None, cfg, progress=progress)
for e in progress:
    print(f"iteration {e.iteration}: {e.samples} samples, loss {e.first_loss:.3f} -> {e.last_loss:.3f}")

print("untrained:", schedulability(val, ckpts[0], cfg))
print("trained:  ", schedulability(val, ckpts[-1], cfg))
print("GEDF:     ", schedulability(val, None, cfg, scheduler=GEDF))

nn.save(ckpts[-1], "demo_neural.s0nn")
print("saved demo_neural.s0nn")
