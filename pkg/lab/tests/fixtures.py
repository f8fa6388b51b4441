from pathlib import Path

from lab.config import build_config

TINY = {
    'run_name': 'tiny',
    'steps': '3',
    'batch_size': '4',
    'seq_len': '8',
    'd_model': '16',
    'd_ff': '32',
    'd_expert': '8',
    'n_routed': '4',
    'top_k': '2',
    'corpus_size': '3000',
    'val_tokens': '400',
    'eval_every': '1',
    'warmup_steps': '0',
}


def tiny_config(out, **overrides):
    raw = dict(TINY, out=str(out))
    raw.update({key: str(value) for key, value in overrides.items()})
    return build_config(raw)


def write_config_file(directory, **overrides):
    path = Path(directory) / 'tiny.env'
    values = dict(TINY)
    values.update({key: str(value) for key, value in overrides.items()})
    path.write_text('# tiny desk config\n' + ''.join(f'{key} = {value}\n' for key, value in values.items()))
    return path
