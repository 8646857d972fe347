"""Lesion protocol, membrane statistics, PCA, and median splits."""

import numpy as np
import pytest

from ipsnn import objective
from ipsnn.analysis import (MedianSplit, N_BINS, bin_neurons, evaluate_task_loss,
                            lesion_eval, membrane_stats, pca_delay,
                            split_by_metric)
from ipsnn.core import IntrinsicProperties
from ipsnn.gradients import task_loss
from ipsnn.harness import ExperimentConfig, build_state
from ipsnn.tasks import PeriodSchedule, generate_task


def props_from_tau_s(values):
    n = len(values)
    return IntrinsicProperties(tau_d=np.zeros((n, 2)),
                               tau_s=np.asarray(values, float),
                               theta=np.ones(n))


class TestBinNeurons:
    def test_hand_normalization(self):
        bins = bin_neurons(props_from_tau_s([0.05, 0.5, 0.95]), "tau_s")
        np.testing.assert_allclose(bins.normalized, [0.0, 0.5, 1.0])
        assert bins.bin_index.tolist() == [0, 5, 9]
        assert not bins.degenerate

    def test_constant_vector_degenerate(self):
        bins = bin_neurons(props_from_tau_s([0.4, 0.4, 0.4]), "tau_s")
        assert bins.degenerate
        assert bins.bin_index.tolist() == [0, 0, 0]

    def test_groups_partition_neurons(self):
        rng = np.random.default_rng(0)
        bins = bin_neurons(props_from_tau_s(rng.uniform(size=33)), "tau_s")
        seen = np.concatenate(bins.groups)
        assert sorted(seen.tolist()) == list(range(33))
        assert len(bins.groups) == N_BINS

    def test_branch_average_for_dendritic_decay(self):
        props = IntrinsicProperties(
            tau_d=np.array([[0.0, 1.0], [0.4, 0.6], [1.0, 1.0]]),
            tau_s=np.ones(3), theta=np.ones(3))
        bins = bin_neurons(props, "tau_d")
        np.testing.assert_allclose(bins.values, [0.5, 0.5, 1.0])

    def test_unknown_property(self):
        with pytest.raises(ValueError):
            bin_neurons(props_from_tau_s([0.1, 0.2]), "gain")


def tiny_config(**kw):
    defaults = dict(family="GNG-DR-2", n_tasks=2, max_iters=8, min_iters=2,
                    convergence_threshold=0.05, seed=5, n_neurons=10,
                    dt_ms=100.0, record_every=10 ** 9,
                    checkpoint_every=10 ** 9)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestLesion:
    def test_report_shape_and_empty_bin_equality(self):
        config = tiny_config()
        state = build_state(config)
        current = generate_task(config.family, 0, config.seed, config.dt_ms)
        nxt = generate_task(config.family, 1, config.seed, config.dt_ms)
        bins = bin_neurons(state.configured.props, "tau_s")
        report = lesion_eval(state, bins, current, nxt, config)
        assert report.current_task_loss.shape == (N_BINS,)
        assert report.next_task_iterations.shape == (N_BINS,)
        for b in range(N_BINS):
            if report.bin_sizes[b] == 0:
                assert report.current_task_loss[b] == report.baseline_loss
                assert report.next_task_iterations[b] == report.baseline_iterations

    def test_all_false_mask_is_bitexact_noop(self):
        config = tiny_config()
        state = build_state(config)
        task = generate_task(config.family, 0, config.seed, config.dt_ms)
        a = evaluate_task_loss(state, task, config)
        b = evaluate_task_loss(state, task, config,
                               lesion_mask=np.zeros(10, dtype=bool))
        assert a == b

    def test_all_neuron_lesion_closed_form(self):
        # every spike silenced: the trace stays zero, the readout stays zero,
        # so the loss collapses to base(0) + lambda_h*sigma + regularizers
        config = tiny_config()
        state = build_state(config)
        state.sigma_h_sq = 0.037
        task = generate_task(config.family, 0, config.seed, config.dt_ms)
        got = evaluate_task_loss(state, task, config,
                                 lesion_mask=np.ones(10, dtype=bool))
        lw = config.loss_weights()
        t = task.schedule.total_steps
        base = np.mean([objective.base_loss(np.zeros((t, 3)), tr.targets, "MSE")
                        for tr in task.trials])
        expected = (base + lw.lambda_h * 0.037
                    + lw.lambda_in * np.sum(state.weights.w_in ** 2) / (10 * 3)
                    + lw.lambda_rec * np.sum(state.weights.w_rec ** 2) / (10 * 10)
                    + lw.lambda_out * np.mean(state.weights.w_out ** 2))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_original_state_untouched(self):
        config = tiny_config()
        state = build_state(config)
        current = generate_task(config.family, 0, config.seed, config.dt_ms)
        nxt = generate_task(config.family, 1, config.seed, config.dt_ms)
        w_before = state.weights.w_rec.copy()
        tau_before = state.configured.props.tau_s.copy()
        bins = bin_neurons(state.configured.props, "tau_s")
        lesion_eval(state, bins, current, nxt, config)
        assert np.array_equal(state.weights.w_rec, w_before)
        assert np.array_equal(state.configured.props.tau_s, tau_before)


class TestMembraneStats:
    def test_constant_potentials(self):
        stats = membrane_stats([np.full((40, 4), 0.3)])
        assert stats.v_var == pytest.approx(0.0, abs=1e-30)
        assert stats.excluded_pairs == 6  # all C(4,2) pairs undefined
        assert np.isnan(stats.corr_mean)

    def test_identical_neurons_correlate_fully(self):
        t = np.sin(np.linspace(0, 6, 50))
        stats = membrane_stats([np.stack([t, t], axis=1)])
        assert stats.corr_mean == pytest.approx(1.0)

    def test_three_neuron_hand_pearson(self):
        # explicit Pearson against the textbook formula
        rng = np.random.default_rng(7)
        v = rng.normal(size=(30, 3))
        stats = membrane_stats([v], task_index=4)

        def pearson(a, b):
            am, bm = a - a.mean(), b - b.mean()
            return float((am * bm).sum()
                         / np.sqrt((am ** 2).sum() * (bm ** 2).sum()))

        hand = [pearson(v[:, i], v[:, j])
                for i in range(3) for j in range(i + 1, 3)]
        assert stats.corr_mean == pytest.approx(np.mean(hand), abs=1e-12)
        assert stats.corr_var == pytest.approx(np.var(hand), abs=1e-12)
        assert stats.v_mean == pytest.approx(v.mean())
        assert stats.task_index == 4


SCHED = PeriodSchedule(5, 10, 5)


class TestPcaDelay:
    def test_identical_tasks_zero_steps(self):
        trace = np.random.default_rng(0).uniform(size=(SCHED.total_steps, 6))
        emb = pca_delay([[trace], [trace], [trace]], SCHED)
        np.testing.assert_allclose(emb.step_sizes, 0.0, atol=1e-12)

    def test_orthonormal_basis(self):
        rng = np.random.default_rng(1)
        tasks = [[rng.uniform(size=(SCHED.total_steps, 8))] for _ in range(5)]
        emb = pca_delay(tasks, SCHED, n_components=3)
        gram = emb.basis.T @ emb.basis
        assert np.linalg.norm(gram - np.eye(3)) < 1e-10

    def test_two_task_known_centroids(self):
        # delay activity differs only along neuron 0 by a known offset
        base = np.zeros((SCHED.total_steps, 4))
        a, b = base.copy(), base.copy()
        a[5:15, 0] = 1.0
        b[5:15, 0] = 3.0
        emb = pca_delay([[a], [b]], SCHED, n_components=2)
        assert emb.step_sizes.shape == (1,)
        assert emb.step_sizes[0] == pytest.approx(2.0, abs=1e-10)
        assert emb.median_step_size == pytest.approx(2.0, abs=1e-10)

    def test_deterministic_signs(self):
        rng = np.random.default_rng(2)
        tasks = [[rng.uniform(size=(SCHED.total_steps, 5))] for _ in range(4)]
        e1 = pca_delay(tasks, SCHED)
        e2 = pca_delay(tasks, SCHED)
        assert np.array_equal(e1.basis, e2.basis)


class TestSplitByMetric:
    def test_constant_speeds_equal_medians(self):
        split = split_by_metric([1, 2, 3, 4, 5, 6], [7, 7, 7, 7, 7, 7])
        assert split.lower_median == split.upper_median == 7.0

    def test_hand_example(self):
        split = split_by_metric([1, 2, 3, 4], [10, 10, 20, 20])
        assert split.lower_median == 10.0 and split.upper_median == 20.0

    def test_odd_count_median_joins_lower(self):
        split = split_by_metric([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
        assert len(split.lower_indices) == 3
        assert len(split.upper_indices) == 2

    def test_needs_two_tasks(self):
        with pytest.raises(ValueError):
            split_by_metric([1.0], [2.0])

    def test_returns_dataclass(self):
        assert isinstance(split_by_metric([1, 2], [3, 4]), MedianSplit)
