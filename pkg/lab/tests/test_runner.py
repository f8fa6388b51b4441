import tempfile
from pathlib import Path

import pandas as pd
from django.test import SimpleTestCase, override_settings

from lab.jobs import job_threads, run_jobs
from lab.records import METRICS_SCHEMA, read_json
from lab.runner import execute, run
from moe import checkpoint

from .fixtures import tiny_config


class RunTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_zero_steps_writes_initial_state(self):
        result = run(tiny_config(self.out, steps=0))
        lines = (result.run_dir / 'metrics.csv').read_text().splitlines()
        self.assertEqual(lines[0], METRICS_SCHEMA)
        self.assertEqual(len(lines), 2)
        model = checkpoint.load(result.run_dir / 'checkpoint.bin')
        self.assertEqual(model.step, 0)
        summary = read_json(result.run_dir / 'summary.json')
        self.assertIsNone(summary['final_lm_loss'])
        self.assertIn('perplexity', summary)
        self.assertIn('maxvio_global', summary)

    def test_metrics_rows_and_side_files(self):
        result = run(tiny_config(self.out, strategy='loss_free', bias_history='true'))
        metrics = pd.read_csv(result.run_dir / 'metrics.csv', comment='#')
        self.assertEqual(list(metrics['step']), [0, 1, 2])
        self.assertIn('maxvio_layer1', metrics.columns)
        self.assertNotIn('wall_ms', metrics.columns)
        timings = pd.read_csv(result.run_dir / 'timings.csv')
        self.assertEqual(list(timings.columns), ['step', 'wall_ms'])
        bias = pd.read_csv(result.run_dir / 'bias.csv')
        self.assertEqual(len(bias), 3 * 4)
        self.assertEqual(result.summary['strategy'], 'loss_free')

    def test_computation_batch_tail_column(self):
        even = run(tiny_config(self.out / 'even', micro_batch_size=2, ep_parallel=2))
        metrics = pd.read_csv(even.run_dir / 'metrics.csv', comment='#')
        self.assertTrue(metrics['maxvio_comp_tail'].isna().all())
        self.assertTrue(metrics['maxvio_computation_batch'].notna().all())

        uneven = run(tiny_config(self.out / 'uneven', micro_batch_size=1, ep_parallel=3))
        metrics = pd.read_csv(uneven.run_dir / 'metrics.csv', comment='#')
        self.assertTrue(metrics['maxvio_comp_tail'].notna().all())
        self.assertTrue(metrics['maxvio_computation_batch'].notna().all())

    def test_same_seed_is_byte_identical(self):
        first = run(tiny_config(self.out / 'a', strategy='loss_free'))
        second = run(tiny_config(self.out / 'b', strategy='loss_free'))
        for name in ('metrics.csv', 'checkpoint.bin'):
            self.assertEqual((first.run_dir / name).read_bytes(), (second.run_dir / name).read_bytes())
        self.assertEqual(first.summary, second.summary)

    def test_seeds_differ(self):
        config = tiny_config(self.out, seeds='0,1')
        a, b = run(config, 0), run(config, 1)
        self.assertEqual(a.run_dir.name, 'tiny-seed0')
        self.assertNotEqual((a.run_dir / 'metrics.csv').read_bytes(), (b.run_dir / 'metrics.csv').read_bytes())

    def test_expert_choice_run(self):
        result = run(tiny_config(self.out, strategy='ec', ec_chunk_size=8, ec_shuffle='true'))
        metrics = pd.read_csv(result.run_dir / 'metrics.csv', comment='#')
        self.assertTrue((metrics['maxvio_batch'] == 0.0).all())


class JobTests(SimpleTestCase):

    @override_settings(MOEBAL_THREADS=4)
    def test_thread_cap(self):
        self.assertEqual(job_threads(), 4)
        self.assertEqual(job_threads(16), 4)
        self.assertEqual(job_threads(0), 1)

    @override_settings(MOEBAL_THREADS=2)
    def test_parallel_matches_serial(self):
        with tempfile.TemporaryDirectory() as tmp:
            serial_cfg = tiny_config(Path(tmp) / 'serial', seeds='0,1')
            parallel_cfg = tiny_config(Path(tmp) / 'parallel', seeds='0,1')
            serial = run_jobs(execute, [(serial_cfg, s) for s in (0, 1)], threads=1)
            parallel = run_jobs(execute, [(parallel_cfg, s) for s in (0, 1)], threads=2)
            self.assertEqual(serial, parallel)
            for seed in (0, 1):
                self.assertEqual((serial_cfg.run_dir(seed) / 'metrics.csv').read_bytes(),
                                 (parallel_cfg.run_dir(seed) / 'metrics.csv').read_bytes())
