#!/usr/bin/env python3
"""Watch adaptation speed fall across a sequence of related tasks.

The outer loop fixes which intrinsic properties are learnable for the
family; the inner loop trains weights and learnable properties on each task
until the composite loss crosses the convergence threshold. Because the
model carries everything over, later tasks need fewer iterations: the
learning-to-learn effect. A small network and a coarse timestep keep this
demo around a minute; the acceptance suite runs the full desk-scale check.
"""

import numpy as np

from ipsnn.harness import ExperimentConfig, compute_metrics, run_family

config = ExperimentConfig(
    family="GNG-DR-2",
    n_tasks=12,
    max_iters=1500,
    min_iters=20,
    convergence_threshold=0.02,
    seed=0,
    n_neurons=32,
    dt_ms=50.0,
    record_every=10 ** 9,     # no artifacts for this demo
    checkpoint_every=10 ** 9,
)

print(f"family {config.family}, mask {config.mask().as_tuple()}, "
      f"{config.n_tasks} sequential tasks, threshold {config.threshold}")
metrics, run = run_family(config)

print("\ntask  converged  iterations  final loss")
for o in run.outcomes:
    print(f"{o.task_index:4d}  {str(o.converged):9s}  {o.iterations_used:10d}"
          f"  {o.final_loss:.4f}")

speeds = [it for _, it in metrics.adaptation_speed]
print(f"\nfailures: {metrics.failure_count}")
if len(speeds) >= 4:
    early = np.median(speeds[:3])
    late = np.median(speeds[-3:])
    print(f"median adaptation speed, first 3 vs last 3 converged tasks: "
          f"{early:.0f} -> {late:.0f}")
print("homeostatic target over tasks:",
      [f"{s:.4f}" for s in run.sigma_history[:6]], "...")
