"""
Binary checkpoint format, little-endian throughout:

    magic (8 bytes) | version u32 | blob length u32 | JSON config blob
    tensor count u32
    per tensor: name length u32 | utf-8 name | rank u32 | dims u64 * rank | f64 data

Parameters are stored under their model names; per-layer expert biases under
`bias.<layer>`.
"""

import json
import logging
import struct
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .balancer import ExpertBiasState
from .exceptions import CheckpointError, ContractError
from .model import MoELanguageModel, ModelConfig, param_shapes

logger = logging.getLogger(__name__)

MAGIC = b'MOEBALCK'
FORMAT_VERSION = 1


def _pack_tensor(name, array):
    encoded = name.encode('utf-8')
    array = np.ascontiguousarray(array, dtype='<f8')
    header = struct.pack('<I', len(encoded)) + encoded + struct.pack('<I', array.ndim)
    header += struct.pack(f'<{array.ndim}Q', *array.shape)
    return header + array.tobytes()


def to_bytes(model):
    blob = model.config_blob().encode('utf-8')
    tensors = [(name, t.data) for name, t in model.params.items()]
    tensors += [(f'bias.{layer}', state.bias) for layer, state in sorted(model.bias_states.items())]
    parts = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(blob)), blob, struct.pack('<I', len(tensors))]
    parts += [_pack_tensor(name, array) for name, array in tensors]
    return b''.join(parts)


class _Reader:

    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.payload):
            raise CheckpointError(f'truncated checkpoint at byte {self.offset}')
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _check_params(params, config):
    expected = param_shapes(config)
    missing = [name for name in expected if name not in params]
    unknown = sorted(set(params) - set(expected))
    if missing:
        raise CheckpointError(f'missing tensor {missing[0]} ({len(missing)} missing)')
    if unknown:
        raise CheckpointError(f'unexpected tensor {unknown[0]}')
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f'tensor {name} has shape {params[name].shape}, expected {tuple(shape)}')


def from_bytes(payload):
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError('bad magic bytes; not a moebal checkpoint')
    version, blob_len = reader.unpack('<II')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version}')
    try:
        blob = json.loads(reader.take(blob_len).decode('utf-8'))
    except ValueError as exc:
        raise CheckpointError(f'corrupt config blob: {exc}') from exc
    if not isinstance(blob, dict) or not isinstance(blob.get('model'), dict):
        raise CheckpointError('config blob has no model section')
    try:
        config = ModelConfig.from_dict(blob['model'])
    except (ContractError, TypeError) as exc:
        raise CheckpointError(f'invalid model config in checkpoint: {exc}') from exc
    (count,) = reader.unpack('<I')
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<I')
        name = reader.take(name_len).decode('utf-8')
        (rank,) = reader.unpack('<I')
        shape = reader.unpack(f'<{rank}Q') if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype='<f8').astype(np.float64).reshape(shape)
    if reader.offset != len(payload):
        raise CheckpointError(f'{len(payload) - reader.offset} trailing bytes after last tensor')

    params = {name: ad.Tensor(a, requires_grad=True, name=name)
              for name, a in arrays.items() if not name.startswith('bias.')}
    _check_params(params, config)
    bias_states = {}
    updates = blob.get('bias_updates', {})
    for layer in config.moe_layers:
        state = ExpertBiasState.initial(config.n_routed, config.update_rule, config.bias_form, config.update_rate)
        key = f'bias.{layer}'
        if key not in arrays:
            raise CheckpointError(f'missing tensor {key}')
        if arrays[key].shape != (config.n_routed,):
            raise CheckpointError(f'tensor {key} has shape {arrays[key].shape}, expected ({config.n_routed},)')
        bias_states[layer] = replace(state, bias=arrays[key], updates=int(updates.get(str(layer), 0)))
    return MoELanguageModel(config, params, bias_states, step=int(blob.get('step', 0)))


def save(model, path):
    try:
        with open(path, 'wb') as fh:
            fh.write(to_bytes(model))
    except OSError as exc:
        raise CheckpointError(f'cannot write checkpoint {path}: {exc}') from exc
    logger.info('checkpoint saved path=%s step=%d', path, model.step)


def load(path):
    try:
        with open(path, 'rb') as fh:
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f'cannot read checkpoint {path}: {exc}') from exc
    model = from_bytes(payload)
    logger.info('checkpoint loaded path=%s step=%d', path, model.step)
    return model
