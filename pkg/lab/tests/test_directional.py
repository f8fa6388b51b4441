"""
Multi-seed training runs checking the direction of the balance effects on the
desk model and the skewed Markov corpus, at reduced step counts.
Excluded from quick runs with `manage.py test --exclude-tag slow`.
"""

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from lab.config import build_config
from lab.probes import chunk_probe
from lab.runner import run
from lab.sweeps import sweep_alpha, sweep_computation_batch, sweep_update_rate

DESK = {'preset': 'desk', 'steps': '300', 'seq_len': '64', 'batch_size': '8', 'corpus_size': '60000',
        'val_tokens': '8192', 'eval_every': '50', 'seeds': '0,1,2,3,4'}


class DirectionTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, run_name, **overrides):
        raw = dict(DESK, run_name=run_name, out=str(self.out))
        raw.update({key: str(value) for key, value in overrides.items()})
        return build_config(raw)

    def summaries(self, strategy, **overrides):
        config = self.config(strategy.replace('_', '-'), strategy=strategy, **overrides)
        return [run(config, seed).summary for seed in config.seeds]


@tag('slow')
class BalanceDirectionTests(DirectionTestCase):

    def test_loss_free_balances_without_costing_perplexity(self):
        loss_free = self.summaries('loss_free', update_rate=1e-3)
        vanilla = self.summaries('vanilla')
        aux = self.summaries('aux', alpha=1e-3)
        lf_vio = np.mean([s['maxvio_global'] for s in loss_free])
        self.assertLess(lf_vio, 0.1)
        self.assertGreater(np.mean([s['maxvio_global'] for s in vanilla]), 0.5)
        self.assertLess(lf_vio, np.mean([s['maxvio_global'] for s in aux]))
        lf_ppl = np.mean([s['perplexity'] for s in loss_free])
        aux_ppl = np.mean([s['perplexity'] for s in aux])
        self.assertLessEqual(lf_ppl, aux_ppl * 1.01)

    def test_update_rate_orders_early_and_late_balance(self):
        result = sweep_update_rate(self.config('rates'), rates=(1e-4, 1e-3, 1e-2))
        tests = result['summary']['tests']
        self.assertEqual(tests['reference'], 'u0.001')
        self.assertLess(tests['early_worse']['u0.0001'], 0.05)
        self.assertLess(tests['late_worse']['u0.01'], 0.05)

    def test_alpha_trades_balance_for_loss(self):
        result = sweep_alpha(self.config('alphas'), alphas=(0.0, 1e-4, 1e-3, 1e-2))
        summary = result['summary']
        self.assertTrue(summary['tests']['maxvio_global_non_increasing'])
        members = summary['members']
        self.assertGreater(members['alpha0.01']['final_lm_loss'], members['alpha0.0001']['final_lm_loss'])
        self.assertEqual(summary['tests']['loss_cost']['high'], 'alpha0.01')


@tag('slow')
class ComputationBatchDirectionTests(DirectionTestCase):

    def test_larger_windows_balance_better_and_aux_stays_above(self):
        config = self.config('windows', steps=200, alpha=1e-3, update_rate=1e-3)
        result = sweep_computation_batch(config, windows=(1, 2, 4, 8, 16))
        summary = result['summary']
        spearman = summary['tests']['spearman']['loss_free']
        self.assertLess(spearman['rho'], 0)
        self.assertLess(spearman['p_value'], 0.05)
        members = summary['members']
        self.assertGreater(members['loss_free']['1'], members['loss_free']['16'])
        self.assertGreater(members['aux']['16'], members['loss_free']['16'])
        self.assertLess(summary['tests']['aux_above_loss_free'], 0.05)


@tag('slow')
class ChunkDirectionTests(DirectionTestCase):

    def test_small_chunks_lower_loss_and_shuffle_closes_the_gap(self):
        config = self.config('chunks', steps=200)
        summary = chunk_probe(config, chunk_sizes=(8, 512))
        tests = summary['tests']
        self.assertLess(tests['small_chunk_lower_loss'], 0.05)
        self.assertGreater(tests['gap'], 0)
        self.assertGreaterEqual(tests['gap_reduction'], 0.5)
        self.assertLess(summary['final_loss']['chunk8-plain']['mean'], summary['final_loss']['chunk512-plain']['mean'])
