"""
Expert Choice chunk-size and shuffle probe. Identical models differing only
in EC chunk size and token shuffling are trained per seed; a small chunk lets
future tokens in the same chunk steer earlier tokens' routing, which shows up
as a lower training loss.
"""

import csv
import logging

import pandas as pd

from moe.exceptions import ContractError, MoebalError

from . import stats
from .records import write_json
from .sweeps import member_config, member_metrics, sweep_dir, train_members

logger = logging.getLogger(__name__)


def probe_label(chunk_size, shuffle):
    return f'chunk{chunk_size}-{"shuffle" if shuffle else "plain"}'


def write_loss_csv(path, metrics):
    """(seed, step, loss) rows for one probe config."""
    try:
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(['seed', 'step', 'loss'])
            for row in metrics.sort_values(['seed', 'step']).itertuples(index=False):
                writer.writerow([row.seed, row.step, repr(float(row.lm_loss))])
    except OSError as exc:
        raise MoebalError(f'cannot write probe csv {path}: {exc}') from exc
    return path


def chunk_probe(config, chunk_sizes, shuffle_modes=(False, True), threads=None):
    """
    Final training loss (mean over the last tenth of steps) per chunk/shuffle
    config and seed. The smallest chunk without shuffling is tested for a
    lower loss than the largest chunk, and shuffling for how much of that gap
    it closes.
    """
    tokens_per_batch = config.batch_size * config.model.seq_len
    chunk_sizes = sorted({int(c) for c in chunk_sizes})
    if not chunk_sizes or not shuffle_modes:
        raise ContractError('chunk probe needs chunk sizes and shuffle modes')
    for chunk in chunk_sizes:
        if chunk < 1 or chunk > tokens_per_batch:
            raise ContractError(f'chunk size {chunk} outside 1..{tokens_per_batch} tokens per batch')
        if chunk * config.model.top_k < config.model.n_routed:
            raise ContractError(f'chunk size {chunk} gives zero expert capacity')

    members = [(probe_label(chunk, shuffle), member_config(config, probe_label(chunk, shuffle), strategy='ec',
                                                           ec_chunk_size=chunk, ec_shuffle=bool(shuffle)))
               for chunk in chunk_sizes for shuffle in shuffle_modes]
    train_members(members, config.seeds, threads)
    metrics = member_metrics(members, config.seeds)
    directory = sweep_dir(config)

    final = {}
    for label, _ in members:
        rows = metrics[metrics['member'] == label]
        write_loss_csv(directory / f'{label}.csv', rows)
        final[label] = [stats.window_means(group.sort_values('step')['lm_loss'])[1]
                        for _, group in rows.groupby('seed')]

    tests = {}
    small, large = chunk_sizes[0], chunk_sizes[-1]
    plain_small, plain_large = probe_label(small, False), probe_label(large, False)
    if small != large and plain_small in final and plain_large in final:
        tests['small_chunk_lower_loss'] = stats.one_sided_greater(final[plain_large], final[plain_small])
        gap = stats.summarize(final[plain_large])['mean'] - stats.summarize(final[plain_small])['mean']
        shuffled_small = probe_label(small, True)
        if shuffled_small in final:
            shuffled_gap = stats.summarize(final[plain_large])['mean'] - stats.summarize(final[shuffled_small])['mean']
            tests['gap'] = gap
            tests['shuffled_gap'] = shuffled_gap
            tests['gap_reduction'] = 1.0 - shuffled_gap / gap if gap else None
    summary = {
        'chunk_sizes': chunk_sizes,
        'final_loss': {label: stats.summarize(values) for label, values in final.items()},
        'per_seed': {label: dict(zip(config.seeds, values)) for label, values in final.items()},
        'tests': tests,
    }
    write_json(directory / 'summary.json', summary)
    pd.DataFrame([{'member': label, 'seed': seed, 'final_loss': value}
                  for label, values in final.items() for seed, value in zip(config.seeds, values)]
                 ).to_csv(directory / 'chunk-probe-final.csv', index=False)
    logger.info('chunk probe done dir=%s configs=%d', directory, len(members))
    return summary
