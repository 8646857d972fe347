#!/usr/bin/env python3
"""Probe functional roles by silencing neuron groups.

Neurons are binned into ten equal ranges of a normalized intrinsic
property. Silencing a bin clamps its emitted spikes to zero (membrane
dynamics keep running) and we measure two damages: the execution loss on
the current task, and how many iterations a lesioned copy needs to learn
the next task. Small network, short budget: a quick qualitative look.
"""

import numpy as np

from ipsnn.analysis import bin_neurons, lesion_eval
from ipsnn.harness import ExperimentConfig, build_state, run_inner_task
from ipsnn.tasks import generate_task

config = ExperimentConfig(family="GNG-DR-2", n_tasks=2, max_iters=600,
                          min_iters=20, convergence_threshold=0.04, seed=1,
                          n_neurons=24, dt_ms=50.0,
                          record_every=10 ** 9, checkpoint_every=10 ** 9)
state = build_state(config)

# train briefly so the properties spread out and the lesion has something to hit
for i in range(2):
    task = generate_task(config.family, i, config.seed, config.dt_ms)
    outcome = run_inner_task(state, task, config)
    state.sigma_h_sq = state.last_mean_sq
    print(f"warm-up task {i}: converged={outcome.converged} "
          f"iters={outcome.iterations_used}")

current = generate_task(config.family, 2, config.seed, config.dt_ms)
nxt = generate_task(config.family, 3, config.seed, config.dt_ms)

bins = bin_neurons(state.configured.props, "tau_s")
print(f"\nbinning on somatic decay: sizes {[len(g) for g in bins.groups]}")
report = lesion_eval(state, bins, current, nxt, config)
print(f"unlesioned: loss {report.baseline_loss:.4f}, "
      f"next-task iterations {report.baseline_iterations}")
print("bin  size  current-task loss  next-task iterations")
for b in range(10):
    print(f"{b:3d}  {report.bin_sizes[b]:4d}  {report.current_task_loss[b]:17.4f}"
          f"  {report.next_task_iterations[b]:20d}")
