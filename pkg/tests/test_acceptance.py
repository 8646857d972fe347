"""Acceptance gate: one test per criterion, at the stated tolerances.

Criterion 6 is a real desk-scale training comparison (six runs of 60
sequential tasks); the whole module fits the stated runtime budgets but
takes several minutes end to end. Each test prints one PASS line.
"""

import itertools
import json
import time

import numpy as np
import pytest

from ipsnn import cli
from ipsnn.core import NetworkConfig, forward_trial, init_weights, noise_step
from ipsnn.harness import ExperimentConfig, build_state, run_family, run_inner_task
from ipsnn.manifest import validate_manifest
from ipsnn.modularity import (CommunityAssignment, LayeredNetwork,
                              community_count, louvain_optimize, modularity_Q,
                              stationarity)
from ipsnn.plasticity import (CandidateProperties, LearningMask, configure,
                              default_fixed_bank, default_learnable_bank,
                              mask_for_family)
from ipsnn.tasks import generate_task
from ipsnn.tensorio import load_checkpoint, save_checkpoint
from ipsnn.analysis import N_BINS, bin_neurons, evaluate_task_loss, lesion_eval
from ipsnn import objective
from ipsnn.verification import (brute_force_best_partition, gradient_check)


def _report(criterion: str, detail: str) -> None:
    print(f"PASS {criterion}: {detail}")


def test_criterion_1_gradient_correctness():
    """Smooth-mode backprop vs central differences on 20 random networks."""
    t0 = time.time()
    errors = [gradient_check(seed, n_neurons=8, t_steps=30, h=1e-5)
              for seed in range(20)]
    elapsed = time.time() - t0
    worst = max(errors)
    assert worst <= 1e-4, f"max relative error {worst:.3e}"
    assert elapsed < 60.0, f"gradient check too slow: {elapsed:.1f}s"
    _report("criterion-1 gradient-correctness",
            f"20 seeds, max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_noise_stationary_variance():
    """OU state variance over 1e6 steps within 2% of 2aA^2/(1-(1-a)^2)."""
    config = NetworkConfig(n_neurons=1, alpha_noise=0.5, a_noise=0.05)
    chains, warmup, keep = 1000, 50, 1000
    rng = np.random.default_rng(np.random.SeedSequence([2024, 2]))
    state = np.zeros(chains)
    samples = np.empty((keep, chains))
    for t in range(warmup + keep):
        state = noise_step(state, rng.standard_normal(chains), config)
        if t >= warmup:
            samples[t - warmup] = state
    assert samples.size == 1_000_000
    target = 2 * 0.5 * 0.05 ** 2 / (1 - (1 - 0.5) ** 2)
    assert target == pytest.approx(3.333e-3, abs=5e-7)
    observed = float(samples.var())
    rel = abs(observed - target) / target
    assert rel <= 0.02, f"variance off by {rel:.2%}"
    _report("criterion-2 noise-variance",
            f"observed {observed:.4e} vs {target:.4e} ({rel:.2%})")


def test_criterion_3_mask_configuration_exactness():
    """Family mask table and per-group bank selection over all 8 masks."""
    table = {"DMS": (1, 0, 0), "CD-DMS": (1, 0, 1),
             "GNG-DR-2": (1, 1, 0), "GNG-DR-4": (1, 1, 1)}
    for family, bits in table.items():
        assert mask_for_family(family).as_tuple() == bits, family
    net = NetworkConfig(n_neurons=6, n_dendrites=2)
    banks = CandidateProperties(default_learnable_bank(net, 1),
                                default_fixed_bank(net, 2))
    for bits in itertools.product((0, 1), repeat=3):
        cfg = configure(banks, LearningMask(*bits))
        for bit, group in zip(bits, ("tau_d", "tau_s", "theta")):
            bank = banks.learnable_bank if bit else banks.fixed_bank
            assert getattr(cfg.props, group) is getattr(bank, group)
    _report("criterion-3 mask-configuration",
            "family table exact; all 8 masks select the right banks")


def test_criterion_4_task_generators():
    """Shapes, fixation windows, and cue-swap over 100 seeded tasks/family."""
    t0 = time.time()
    layout = {"DMS": (11, 3), "CD-DMS": (12, 3),
              "GNG-DR-2": (3, 3), "GNG-DR-4": (5, 5)}
    for family, (in_dim, out_dim) in layout.items():
        for index in range(100):
            task = generate_task(family, index, seed=500 + index, dt_ms=10.0)
            sd = task.schedule.stimulus_steps + task.schedule.delay_steps
            assert task.schedule.total_steps == 200
            for trial in task.trials:
                assert trial.inputs.shape == (200, in_dim)
                assert trial.targets.shape == (200, out_dim)
                assert np.all(trial.inputs[:sd, 0] == 1.0)
                assert np.all(trial.inputs[sd:, 0] == 0.0)
                assert np.all(trial.targets[:sd, 0] == 1.0)
                assert np.all(trial.targets[sd:, 0] == 0.0)
            if family == "CD-DMS":
                by_key = {(t.context, t.inputs[0, 1:11].tobytes()): t
                          for t in task.trials}
                for trial in task.trials:
                    twin = by_key[(1 - trial.context,
                                   trial.inputs[0, 1:11].tobytes())]
                    assert np.array_equal(trial.targets[:, [0, 2, 1]],
                                          twin.targets)
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"generator suite too slow: {elapsed:.1f}s"
    _report("criterion-4 task-generators",
            f"400 tasks validated in {elapsed:.1f}s")


def _random_fixture(rng, n, n_layers, coupling):
    adj = np.zeros((n_layers, n, n))
    for l in range(n_layers):
        a = np.triu(rng.uniform(0.0, 1.0, size=(n, n))
                    * (rng.random((n, n)) < 0.6), 1)
        adj[l] = a + a.T
    return LayeredNetwork(adjacency=adj, gamma=np.ones(n_layers),
                          coupling=coupling if n_layers > 1 else 0.0)


def test_criterion_5_modularity_oracle():
    """Louvain attains the exhaustive optimum on >= 20 small fixtures."""
    fixtures = []
    clique = np.zeros((6, 6))
    for group in ((0, 1, 2), (3, 4, 5)):
        for i in group:
            for j in group:
                if i != j:
                    clique[i, j] = 1.0
    fixtures.append(("two-3-cliques",
                     LayeredNetwork(adjacency=clique[None],
                                    gamma=np.ones(1), coupling=0.0)))
    rng = np.random.default_rng(np.random.SeedSequence([813, 5]))
    for i in range(12):
        fixtures.append((f"single-{i}",
                         _random_fixture(rng, int(rng.integers(4, 9)), 1, 0.0)))
    for i in range(8):
        fixtures.append((f"double-{i}",
                         _random_fixture(rng, int(rng.integers(4, 6)), 2,
                                         float(rng.uniform(0.1, 1.5)))))
    assert len(fixtures) >= 20
    worst = 0.0
    for name, net in fixtures:
        _, q_best = brute_force_best_partition(net)
        found = louvain_optimize(net, seed=11, restarts=24)
        q_found = modularity_Q(net, found)
        assert abs(q_found - q_best) <= 1e-9, f"{name}: {q_found} vs {q_best}"
        worst = max(worst, abs(q_found - q_best))
        if name == "two-3-cliques":
            assert q_found == pytest.approx(0.5, abs=1e-12)
    constant = CommunityAssignment(np.tile(np.array([0, 0, 1, 1, 2]), (4, 1)))
    per_c, mean_s = stationarity(constant)
    assert mean_s == 1.0 and all(v == 1.0 for v in per_c.values())
    counts, mean_c = community_count(constant)
    assert counts.tolist() == [3, 3, 3, 3] and mean_c == 3.0
    _report("criterion-5 modularity-oracle",
            f"{len(fixtures)} fixtures, max |dQ| = {worst:.1e}")


def test_criterion_7_lesion_soundness():
    """Empty-bin no-op, all-neuron closed form, ten bins per property."""
    config = ExperimentConfig(family="GNG-DR-2", n_tasks=2, max_iters=10,
                              min_iters=2, convergence_threshold=0.05,
                              seed=7, n_neurons=12, dt_ms=100.0,
                              record_every=10 ** 9, checkpoint_every=10 ** 9)
    state = build_state(config)
    current = generate_task(config.family, 0, config.seed, config.dt_ms)
    nxt = generate_task(config.family, 1, config.seed, config.dt_ms)

    baseline = evaluate_task_loss(state, current, config)
    noop = evaluate_task_loss(state, current, config,
                              lesion_mask=np.zeros(12, dtype=bool))
    assert noop == baseline  # bit-exact

    state.sigma_h_sq = 0.02
    got = evaluate_task_loss(state, current, config,
                             lesion_mask=np.ones(12, dtype=bool))
    lw = config.loss_weights()
    t = current.schedule.total_steps
    silent_base = np.mean([
        objective.base_loss(np.zeros((t, 3)), tr.targets, "MSE")
        for tr in current.trials])
    expected = (silent_base + lw.lambda_h * 0.02
                + lw.lambda_in * np.sum(state.weights.w_in ** 2) / (12 * 3)
                + lw.lambda_rec * np.sum(state.weights.w_rec ** 2) / (12 * 12)
                + lw.lambda_out * np.mean(state.weights.w_out ** 2))
    assert got == pytest.approx(expected, rel=1e-12)

    state.sigma_h_sq = 0.0
    for prop in ("tau_d", "tau_s", "theta"):
        bins = bin_neurons(state.configured.props, prop)
        assert len(bins.groups) == N_BINS
        report = lesion_eval(state, bins, current, nxt, config)
        assert report.current_task_loss.shape == (N_BINS,)
        for b in range(N_BINS):
            if report.bin_sizes[b] == 0:
                assert report.current_task_loss[b] == report.baseline_loss
    _report("criterion-7 lesion-soundness",
            "empty bin bit-exact, silenced-network loss matches closed form, "
            "10 bins per property")


def test_criterion_8_persistence(tmp_path):
    """Checkpoint round trip replays bit-exactly; manifest hash validates."""
    net = NetworkConfig(n_neurons=10, n_dendrites=2, dt_ms=20.0, rng_seed=5)
    weights = init_weights(net, 3, 3, seed=8)
    learnable = default_learnable_bank(net, 9)
    fixed = default_fixed_bank(net, 10)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, net, weights, learnable, fixed, (1, 1, 0),
                    sigma_h_sq=0.031)
    ckpt = load_checkpoint(path)
    x = np.random.default_rng(12).uniform(size=(60, 3))
    for rng_seed in (None, 123):
        kw = {} if rng_seed is None else {"rng": np.random.default_rng(rng_seed)}
        a = forward_trial(weights, learnable, net, x, **kw)
        kw = {} if rng_seed is None else {"rng": np.random.default_rng(rng_seed)}
        b = forward_trial(ckpt.weights, ckpt.learnable_bank, ckpt.config, x, **kw)
        assert np.array_equal(a.readout, b.readout)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.spikes, b.spikes)

    cfg = {"family": "GNG-DR-2", "convergence_threshold": 0.05, "n_tasks": 2,
           "max_iters": 5, "min_iters": 1, "n_neurons": 8, "dt_ms": 100.0,
           "seed": 3}
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert validate_manifest(str(out)) == []
    _report("criterion-8 persistence",
            "bit-exact forward replay after reload; manifest validates")


def test_criterion_9_end_to_end_determinism(tmp_path):
    """Identical config and seed produce identical metrics.csv bytes."""
    cfg = {"family": "DMS", "convergence_threshold": 0.05, "n_tasks": 2,
           "max_iters": 8, "min_iters": 2, "n_neurons": 10, "dt_ms": 100.0,
           "seed": 11, "record_every": 1, "checkpoint_every": 1}
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        outs.append(out)
    a = (outs[0] / "metrics.csv").read_bytes()
    b = (outs[1] / "metrics.csv").read_bytes()
    assert a == b
    _report("criterion-9 determinism",
            f"two runs, identical metrics.csv ({len(a)} bytes)")


def test_criterion_6_desk_scale_l2l_trend():
    """64-neuron network, GNG-DR-2 at dt=20ms: adaptation accelerates and the
    all-fixed ablation fails at least as often, per seed, within budget."""
    t0 = time.time()
    seeds = (0, 1, 2)
    medians = {}
    ip2_failures = {}
    for seed in seeds:
        cfg = ExperimentConfig(family="GNG-DR-2", variant="ip2", n_tasks=60,
                               max_iters=3000, min_iters=50,
                               convergence_threshold=0.01, seed=seed,
                               n_neurons=64, dt_ms=20.0,
                               record_every=10 ** 9, checkpoint_every=10 ** 9)
        metrics, run = run_family(cfg)
        iters = [o.iterations_used for o in run.outcomes]
        assert len(iters) == 60, f"ip2 seed {seed} stopped early"
        medians[seed] = (float(np.median(iters[:10])),
                         float(np.median(iters[50:60])))
        ip2_failures[seed] = metrics.failure_count
    improved = sum(1 for early, late in medians.values() if late < early)
    assert improved >= 2, f"trend held on {improved}/3 seeds: {medians}"

    for seed in seeds:
        cfg = ExperimentConfig(family="GNG-DR-2", variant="vanilla",
                               n_tasks=60, max_iters=3000, min_iters=50,
                               convergence_threshold=0.01, seed=seed,
                               n_neurons=64, dt_ms=20.0,
                               record_every=10 ** 9, checkpoint_every=10 ** 9)
        metrics, _ = run_family(cfg)
        assert metrics.failure_count >= ip2_failures[seed], (
            f"seed {seed}: vanilla {metrics.failure_count} failures < "
            f"ip2 {ip2_failures[seed]}")
    elapsed = time.time() - t0
    assert elapsed <= 45 * 60, f"over budget: {elapsed / 60:.1f} min"
    _report("criterion-6 desk-scale-l2l",
            f"medians early->late {medians}; ip2 failures {ip2_failures}; "
            f"vanilla >= ip2 failures on all seeds; {elapsed / 60:.1f} min")
