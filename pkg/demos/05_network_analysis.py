#!/usr/bin/env python3
"""Post-hoc dynamics analyses: correlations, communities, delay-period PCA.

Membrane potentials from a few simulated trials become sliding-window
correlation layers; generalized Louvain labels communities across layers,
and the usual summaries follow (modularity Q, community count,
stationarity, allegiance). Delay-period traces from several tasks feed a
PCA that tracks how far consecutive task representations move.
"""

import numpy as np

from ipsnn.analysis import membrane_stats, pca_delay, split_by_metric
from ipsnn.core import forward_trial, init_weights
from ipsnn.harness import ExperimentConfig, build_state
from ipsnn.modularity import build_layers, louvain_optimize, modularity_report
from ipsnn.tasks import generate_task

config = ExperimentConfig(family="DMS", n_tasks=1, seed=3, n_neurons=24,
                          dt_ms=20.0, convergence_threshold=0.05,
                          gain_in=4.0, gain_rec=2.0)
state = build_state(config)
state.configured.props.tau_d[...] = 0.4
state.configured.props.theta[...] = 0.7

tasks = [generate_task("DMS", i, config.seed, config.dt_ms) for i in range(6)]
recordings = [
    [forward_trial(state.weights, state.configured.props, state.net,
                   trial.inputs, rng=np.random.default_rng(100 + i))
     for trial in task.trials]
    for i, task in enumerate(tasks)
]

stats = membrane_stats([r.v for r in recordings[0]], task_index=0)
print(f"membrane stats, task 0: mean {stats.v_mean:+.3f}, "
      f"var {stats.v_var:.3f}, pairwise corr {stats.corr_mean:+.3f} "
      f"({stats.excluded_pairs} undefined pairs excluded)")

v = np.concatenate([r.v for r in recordings[0]], axis=0)
net = build_layers(v, window_steps=25, stride=25, gamma=1.0, coupling=1.0)
assignment = louvain_optimize(net, seed=0)
report = modularity_report(net, assignment)
print(f"\nmultilayer communities over {net.n_layers} windows:")
print(f"  Q = {report.q:.4f}")
print(f"  communities per layer: {report.community_counts.tolist()} "
      f"(mean {report.mean_communities:.2f})")
print(f"  stationarity: {report.mean_stationarity:.3f}")
print(f"  allegiance matrix shape: {report.allegiance.shape}, "
      f"diagonal all ones: {bool(np.all(np.diag(report.allegiance) == 1.0))}")

emb = pca_delay([[r.trace for r in recs] for recs in recordings],
                tasks[0].schedule, n_components=2)
print(f"\ndelay-period PCA over {len(tasks)} tasks:")
print(f"  median centroid step size: {emb.median_step_size:.4f}")
print(f"  ensemble variance in the plane: {emb.ensemble_variance:.4f}")

# relate a per-task metric to adaptation speed by median split
fake_speeds = np.array([180, 150, 120, 100, 90, 85], dtype=float)
qs = np.array([0.31, 0.35, 0.33, 0.41, 0.44, 0.46])
split = split_by_metric(qs, fake_speeds)
print(f"\nmedian split of tasks by Q: low-Q median speed "
      f"{split.lower_median:.0f}, high-Q median speed {split.upper_median:.0f}")
