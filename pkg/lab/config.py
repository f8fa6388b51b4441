"""
Experiment configuration: flat `key = value` files validated by
ExperimentConfigForm, with CLI flags layered on top.
"""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

from decouple import RepositoryEnv
from django.conf import settings

from moe.exceptions import ConfigError, ContractError
from moe.model import PRESETS, ModelConfig

from .forms import ExperimentConfigForm

logger = logging.getLogger(__name__)

MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {'seed'}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    run_name: str = 'run'
    steps: int = 300
    batch_size: int = 8
    micro_batch_size: int = None
    ep_parallel: int = 1
    out: Path = None
    seeds: tuple = (0,)
    eval_every: int = 50
    bias_history: bool = False
    corpus: str = 'markov2'
    corpus_path: str = ''
    corpus_size: int = 200_000
    corpus_seed: int = 0
    alphabet_size: int = 32
    val_tokens: int = 16_384
    lr: float = 1e-3
    warmup_steps: int = 100

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError('seed list is empty')
        micro = self.micro_batch_size or self.batch_size
        if self.batch_size % micro:
            raise ConfigError(f'batch_size={self.batch_size} is not a multiple of micro_batch_size={micro}')

    @property
    def output_root(self):
        return Path(self.out) if self.out else Path(settings.MOEBAL_OUTPUT_ROOT)

    @property
    def micro(self):
        return self.micro_batch_size or self.batch_size

    def run_dir(self, seed):
        return self.output_root / f'{self.run_name}-seed{seed}'

    def with_seed(self, seed):
        return replace(self, model=replace(self.model, seed=seed), seeds=(seed,))

    def with_model(self, **changes):
        return replace(self, model=replace(self.model, **changes))


def read_key_values(path):
    """Parse a flat config file; lines must be blank, comments or key = value."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if text and not text.startswith('#') and '=' not in text:
            raise ConfigError(f'{path}:{number}: expected key = value, got {text!r}')
    return dict(RepositoryEnv(str(path)).data)


def build_config(raw):
    """Validate raw string values and assemble an ExperimentConfig."""
    raw = {key: value for key, value in raw.items() if value is not None}
    form = ExperimentConfigForm(data={k: str(v) for k, v in raw.items()})
    unknown = sorted(set(raw) - set(form.fields))
    if unknown:
        raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
    if not form.is_valid():
        raise ConfigError(form.error_line())
    values = {key: form.cleaned_data[key] for key in raw if form.cleaned_data[key] not in (None, '')}

    model_values = dict(PRESETS[values.pop('preset', None) or 'desk'])
    for key in list(values):
        if key in MODEL_KEYS:
            model_values[key] = values.pop(key)
    if (model_values.get('gate') == 'softmax' and model_values.get('strategy') == 'loss_free'
            and 'update_rule' not in model_values):
        model_values['update_rule'] = 'proportional'
    seeds = values.get('seeds') or (0,)
    try:
        model = ModelConfig(seed=seeds[0], **model_values)
        return ExperimentConfig(model=model, **values)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=None):
    raw = read_key_values(path) if path else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config = build_config(raw)
    logger.debug('config loaded path=%s run=%s strategy=%s', path, config.run_name, config.model.strategy)
    return config
