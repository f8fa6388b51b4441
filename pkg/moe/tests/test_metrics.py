import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from moe import autodiff as ad
from moe.exceptions import ContractError
from moe.metrics import (
    LoadCounter, layer_average, maxvio, maxvio_batch, maxvio_computation_batch, maxvio_global, sample_loads,
    windowed_maxvio,
)
from moe.routing import ExpertChoiceConfig, RoutingAssignment, RoutingScores, expert_choice_select


def counter(counts):
    counts = np.asarray(counts)
    return LoadCounter(counts, 'batch', int(counts.sum()) or 1)


def scalar_maxvio(counts):
    mean = sum(counts) / len(counts)
    return (max(counts) - mean) / mean


def random_assignment(rng, n_tokens, n_experts, top_k):
    mask = np.zeros((n_tokens, n_experts), dtype=bool)
    for t in range(n_tokens):
        mask[t, rng.choice(n_experts, size=top_k, replace=False)] = True
    return RoutingAssignment(mask, ad.Tensor(mask.astype(float)), top_k)


class MaxVioTests(SimpleTestCase):

    def test_balanced(self):
        self.assertEqual(maxvio(counter([10, 10, 10, 10])), 0.0)

    def test_analytic(self):
        self.assertEqual(maxvio(counter([2, 1, 1, 0])), 1.0)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            counts = rng.integers(0, 100, size=rng.integers(1, 12))
            if counts.sum() == 0:
                continue
            self.assertAlmostEqual(maxvio(counter(counts)), scalar_maxvio(counts.tolist()), places=12)

    def test_scale_invariant_and_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            counts = rng.integers(1, 50, size=6)
            value = maxvio(counter(counts))
            self.assertGreaterEqual(value, 0.0)
            self.assertAlmostEqual(value, maxvio(counter(counts * 7)), places=12)

    def test_zero_tokens(self):
        with self.assertRaises(ContractError):
            maxvio(LoadCounter(np.zeros(4), 'batch', 0))

    def test_unknown_granularity(self):
        with self.assertRaisesRegex(ContractError, 'granularity'):
            LoadCounter(np.ones(4), 'epoch', 4)
        self.assertEqual(LoadCounter.empty(4).granularity, 'global')

    def test_global_accumulates(self):
        total = LoadCounter.empty(2).merge(counter([3, 1])).merge(counter([1, 3]))
        self.assertEqual(maxvio_global(total), 0.0)
        self.assertEqual(total.tokens_seen, 8)

    def test_batch_series(self):
        self.assertEqual(maxvio_batch([counter([2, 2]), counter([3, 1])]), [0.0, 0.5])


class ComputationBatchTests(SimpleTestCase):

    def test_single_window_equals_batch(self):
        rng = np.random.default_rng(2)
        assignment = random_assignment(rng, 4 * 16, 8, 2)
        windows = maxvio_computation_batch(assignment, 16, 2, 2)
        self.assertEqual(windows.values, [maxvio_batch([assignment])[0]])
        self.assertIsNone(windows.tail)

    def test_expert_choice_window_equals_chunk(self):
        values = np.random.default_rng(3).uniform(size=(64, 8))
        assignment = expert_choice_select(RoutingScores(ad.Tensor(values)), ExpertChoiceConfig(chunk_size=16), 2)
        windows = maxvio_computation_batch(assignment, 16, 1, 1)
        self.assertEqual(windows.values, [0.0, 0.0, 0.0, 0.0])

    def test_windows_match_recount(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            assignment = random_assignment(rng, 10 * 8, 6, 2)
            windows = maxvio_computation_batch(assignment, 8, 3, 1)
            for w, value in enumerate(windows.values):
                block = assignment.mask[w * 24:(w + 1) * 24].sum(axis=0)
                self.assertAlmostEqual(value, scalar_maxvio(block.tolist()), places=12)
            tail = assignment.mask[72:].sum(axis=0)
            self.assertAlmostEqual(windows.tail, scalar_maxvio(tail.tolist()), places=12)

    def test_sample_loads(self):
        mask = np.array([[1, 0], [1, 0], [0, 1], [1, 0]], dtype=bool)
        assert_array_equal(sample_loads(mask, 2), [[2, 0], [1, 1]])
        with self.assertRaises(ContractError):
            sample_loads(mask, 3)

    def test_window_must_hold_a_sample(self):
        with self.assertRaises(ContractError):
            windowed_maxvio(np.ones((3, 2)), 0, 4)


class LayerAverageTests(SimpleTestCase):

    def test_identity_and_mean(self):
        self.assertEqual(layer_average([0.7]), 0.7)
        self.assertAlmostEqual(layer_average([0.2, 0.4]), 0.3, places=15)
        values = np.random.default_rng(5).uniform(size=9)
        self.assertAlmostEqual(layer_average(values), sum(values) / 9, places=14)

    def test_empty(self):
        with self.assertRaises(ContractError):
            layer_average([])
