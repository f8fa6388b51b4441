"""
Per-run output files. metrics.csv holds only seed-determined values so that
two runs of one (config, seed) are byte-identical; wall-clock time goes to
timings.csv.
"""

import csv
import json
import logging
from pathlib import Path

from moe.exceptions import MoebalError

logger = logging.getLogger(__name__)

METRICS_SCHEMA = '# moebal-metrics v2'
METRICS_COLUMNS = ['step', 'lm_loss', 'aux_loss', 'maxvio_batch', 'maxvio_computation_batch',
                   'maxvio_comp_tail', 'bias_min', 'bias_max']


def _fmt(value):
    return '' if value is None else repr(float(value))


class RunFiles:
    """Streams metrics, timings and optional bias history into a run directory."""

    def __init__(self, run_dir, moe_layers, bias_history=False):
        self.run_dir = Path(run_dir)
        self.moe_layers = list(moe_layers)
        self.bias_history = bias_history
        self._handles = []

    def _open(self, name, header_lines, columns):
        path = self.run_dir / name
        try:
            fh = open(path, 'w', newline='')
        except OSError as exc:
            raise MoebalError(f'cannot open {path}: {exc}') from exc
        self._handles.append(fh)
        for line in header_lines:
            fh.write(line + '\n')
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(columns)
        return writer

    def __enter__(self):
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise MoebalError(f'cannot create run directory {self.run_dir}: {exc}') from exc
        layer_columns = [f'maxvio_layer{layer}' for layer in self.moe_layers]
        self.metrics = self._open('metrics.csv', [METRICS_SCHEMA], METRICS_COLUMNS + layer_columns)
        self.timings = self._open('timings.csv', [], ['step', 'wall_ms'])
        self.bias = self._open('bias.csv', [], ['step', 'layer', 'expert', 'bias']) if self.bias_history else None
        return self

    def __exit__(self, exc_type, exc, tb):
        for fh in self._handles:
            fh.close()
        return False

    def write(self, record, bias_states=None):
        self.metrics.writerow([record.step, _fmt(record.lm_loss), _fmt(record.aux_loss),
                               _fmt(record.maxvio_batch), _fmt(record.maxvio_computation_batch),
                               _fmt(record.maxvio_comp_tail), _fmt(record.bias_min), _fmt(record.bias_max)]
                              + [_fmt(v) for v in record.layer_maxvio])
        self.timings.writerow([record.step, f'{record.wall_ms:.3f}'])
        if self.bias is not None and bias_states:
            for layer, state in sorted(bias_states.items()):
                for expert, value in enumerate(state.bias):
                    self.bias.writerow([record.step, layer, expert, _fmt(value)])


def write_json(path, payload):
    path = Path(path)
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    except OSError as exc:
        raise MoebalError(f'cannot write {path}: {exc}') from exc
    return path


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise MoebalError(f'cannot read {path}: {exc}') from exc
