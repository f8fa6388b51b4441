import json
import struct
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from moe import checkpoint
from moe.exceptions import CheckpointError
from moe.model import MoELanguageModel, ModelConfig
from moe.optim import Adam
from moe.training import evaluate, train_step

CFG = ModelConfig(vocab_size=32, d_model=16, n_layers=3, seq_len=8, d_ff=32, n_routed=4, top_k=2,
                  d_expert=8, strategy='loss_free', update_rate=0.01, seed=2)


def trained_model(steps=2):
    model = MoELanguageModel(CFG)
    optimizer = Adam(model.parameters(), warmup_steps=0)
    rng = np.random.default_rng(0)
    for _ in range(steps):
        train_step(rng.integers(0, 32, size=(4, 9)), model, optimizer)
    return model


class CheckpointTests(SimpleTestCase):

    def test_round_trip_preserves_evaluation(self):
        model = trained_model()
        tokens = np.random.default_rng(1).integers(0, 32, size=8 * 6 + 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'checkpoint.bin'
            checkpoint.save(model, path)
            restored = checkpoint.load(path)
        self.assertEqual(restored.config, model.config)
        self.assertEqual(restored.step, 2)
        for layer in CFG.moe_layers:
            assert_array_equal(restored.bias_states[layer].bias, model.bias_states[layer].bias)
            self.assertEqual(restored.bias_states[layer].updates, 2)
        self.assertEqual(evaluate(restored, tokens), evaluate(model, tokens))

    def test_serialization_is_deterministic(self):
        self.assertEqual(checkpoint.to_bytes(trained_model()), checkpoint.to_bytes(trained_model()))

    def test_layout_header(self):
        payload = checkpoint.to_bytes(MoELanguageModel(replace(CFG, strategy='vanilla')))
        self.assertEqual(payload[:8], b'MOEBALCK')
        self.assertEqual(int.from_bytes(payload[8:12], 'little'), 1)

    def test_corrupt_payloads(self):
        payload = checkpoint.to_bytes(MoELanguageModel(CFG))
        with self.assertRaisesRegex(CheckpointError, 'magic'):
            checkpoint.from_bytes(b'NOTMOEBL' + payload[8:])
        with self.assertRaisesRegex(CheckpointError, 'version'):
            checkpoint.from_bytes(payload[:8] + (7).to_bytes(4, 'little') + payload[12:])
        with self.assertRaisesRegex(CheckpointError, 'truncated'):
            checkpoint.from_bytes(payload[:-3])
        with self.assertRaisesRegex(CheckpointError, 'trailing'):
            checkpoint.from_bytes(payload + b'\x00')

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            checkpoint.load('/nonexistent/checkpoint.bin')


def assemble(blob, tensors):
    """A checkpoint payload from a config blob and (name, array) pairs."""
    encoded = json.dumps(blob).encode('utf-8')
    parts = [checkpoint.MAGIC, struct.pack('<II', checkpoint.FORMAT_VERSION, len(encoded)), encoded,
             struct.pack('<I', len(tensors))]
    parts += [checkpoint._pack_tensor(name, array) for name, array in tensors]
    return b''.join(parts)


class CheckpointContentTests(SimpleTestCase):

    def setUp(self):
        self.model = MoELanguageModel(CFG)
        self.blob = json.loads(self.model.config_blob())
        self.tensors = [(name, t.data) for name, t in self.model.params.items()]
        self.tensors += [(f'bias.{layer}', s.bias) for layer, s in sorted(self.model.bias_states.items())]

    def test_assembled_payload_matches_writer(self):
        self.assertEqual(assemble(self.blob, self.tensors), checkpoint.to_bytes(self.model))

    def test_blob_without_model_section(self):
        with self.assertRaisesRegex(CheckpointError, 'no model section'):
            checkpoint.from_bytes(assemble({'step': 0}, self.tensors))
        with self.assertRaisesRegex(CheckpointError, 'no model section'):
            checkpoint.from_bytes(assemble([1, 2], self.tensors))

    def test_invalid_model_config(self):
        blob = dict(self.blob, model=dict(self.blob['model'], top_k=9))
        with self.assertRaisesRegex(CheckpointError, 'invalid model config'):
            checkpoint.from_bytes(assemble(blob, self.tensors))

    def test_missing_parameter(self):
        tensors = [(name, a) for name, a in self.tensors if name != 'blocks.1.moe.centroids']
        with self.assertRaisesRegex(CheckpointError, 'missing tensor blocks.1.moe.centroids'):
            checkpoint.from_bytes(assemble(self.blob, tensors))

    def test_unexpected_parameter(self):
        with self.assertRaisesRegex(CheckpointError, 'unexpected tensor extra'):
            checkpoint.from_bytes(assemble(self.blob, self.tensors + [('extra', np.zeros(2))]))

    def test_wrong_shapes(self):
        tensors = [(name, a[:-1] if name == 'lm_head' else a) for name, a in self.tensors]
        with self.assertRaisesRegex(CheckpointError, 'lm_head has shape'):
            checkpoint.from_bytes(assemble(self.blob, tensors))
        tensors = [(name, np.zeros(3) if name == 'bias.1' else a) for name, a in self.tensors]
        with self.assertRaisesRegex(CheckpointError, 'bias.1 has shape'):
            checkpoint.from_bytes(assemble(self.blob, tensors))
