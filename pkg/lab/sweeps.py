"""
Multi-member, multi-seed sweeps. Each member is an ExperimentConfig variant
trained once per seed; curves are averaged over seeds into a wide comparison
CSV (step plus one column per member) that the SVG is drawn from.
"""

import logging
from dataclasses import replace

import numpy as np
import pandas as pd

from moe import checkpoint
from moe.exceptions import ContractError, MoebalError
from moe.metrics import layer_average, sample_loads, windowed_maxvio
from moe.training import split_batch, validation_windows

from . import stats
from .corpus import corpus_for, split_corpus
from .jobs import run_jobs
from .plotting import plot, read_csv
from .records import write_json
from .runner import execute

logger = logging.getLogger(__name__)

UPDATE_RATES = (1e-4, 1e-3, 1e-2)
ALPHAS = (0.0, 1e-4, 1e-3, 1e-2)
WINDOWS = (1, 2, 4, 8, 16, 32, 64)


def sweep_dir(config):
    return config.output_root / config.run_name


def member_config(config, label, **model_changes):
    """`config` renamed to `label`, placed under the sweep directory."""
    return replace(config.with_model(**model_changes), run_name=label, out=sweep_dir(config))


def train_members(members, seeds, threads=None):
    """Train every (member, seed); returns the per-run summaries, in order."""
    jobs = [(cfg, seed) for _, cfg in members for seed in seeds]
    summaries = run_jobs(execute, jobs, threads)
    for (cfg, seed), summary in zip(jobs, summaries):
        logger.info('member done run=%s seed=%d perplexity=%.4f maxvio_global=%.4f',
                    cfg.run_name, seed, summary['perplexity'], summary['maxvio_global'])
    return summaries


def member_metrics(members, seeds):
    """metrics.csv rows of every run, tagged with member and seed."""
    frames = []
    for label, cfg in members:
        for seed in seeds:
            frame = read_csv(cfg.run_dir(seed) / 'metrics.csv')
            frames.append(frame.assign(member=label, seed=seed))
    return pd.concat(frames, ignore_index=True)


def comparison_frame(metrics, labels, column):
    """Seed-averaged `column` per step, one column per member."""
    wide = metrics.groupby(['step', 'member'])[column].mean().unstack('member')
    return wide.reindex(columns=labels)


def final_frame(members, seeds, summaries):
    rows = []
    jobs = [(label, seed) for label, _ in members for seed in seeds]
    for (label, seed), summary in zip(jobs, summaries):
        rows.append({'member': label, 'seed': seed, 'perplexity': summary['perplexity'],
                     'maxvio_global': summary['maxvio_global'], 'final_lm_loss': summary['final_lm_loss']})
    return pd.DataFrame(rows)


def write_comparison(directory, name, wide, final, column, tests):
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f'{name}.csv'
    try:
        wide.to_csv(csv_path, index_label='step')
        final.to_csv(directory / f'{name}-final.csv', index=False)
    except OSError as exc:
        raise MoebalError(f'cannot write sweep results in {directory}: {exc}') from exc
    svg_path = plot([csv_path], directory / f'{name}.svg', title=f'{name}: {column}')
    means = final.groupby('member', sort=False)[['perplexity', 'maxvio_global', 'final_lm_loss']].mean()
    summary = {
        'metric': column,
        'members': {label: {key: float(value) for key, value in row.items()} for label, row in means.iterrows()},
        'tests': tests,
    }
    write_json(directory / 'summary.json', summary)
    return {'csv': csv_path, 'svg': svg_path, 'summary': summary}


def _series(metrics, label, column):
    """Per-seed arrays of `column` for one member, ordered by step."""
    rows = metrics[metrics['member'] == label].sort_values(['seed', 'step'])
    return [group[column].to_numpy() for _, group in rows.groupby('seed')]


def _rate_label(value):
    return f'{value:g}'


def sweep_update_rate(config, rates=UPDATE_RATES, threads=None):
    """
    Loss-free balancing at several update rates u. Reports early-window and
    late-window MaxVio_batch per seed; rates below the middle rate are tested
    for worse early balance, rates above it for worse late balance.
    """
    if not rates:
        raise ContractError('update-rate sweep needs at least one rate')
    members = [(f'u{_rate_label(u)}', member_config(config, f'u{_rate_label(u)}', strategy='loss_free',
                                                      update_rate=float(u))) for u in rates]
    summaries = train_members(members, config.seeds, threads)
    metrics = member_metrics(members, config.seeds)
    labels = [label for label, _ in members]

    windows = {}
    for label in labels:
        per_seed = [stats.window_means(series) for series in _series(metrics, label, 'maxvio_batch')]
        windows[label] = {'early': [w[0] for w in per_seed], 'late': [w[1] for w in per_seed]}
    positive = sorted(u for u in rates if u > 0)
    tests = {'windows': windows, 'early_worse': {}, 'late_worse': {}}
    if positive:
        reference = positive[len(positive) // 2]
        ref = f'u{_rate_label(reference)}'
        tests['reference'] = ref
        for u in positive:
            label = f'u{_rate_label(u)}'
            if u < reference:
                tests['early_worse'][label] = stats.one_sided_greater(windows[label]['early'], windows[ref]['early'])
            elif u > reference:
                tests['late_worse'][label] = stats.one_sided_greater(windows[label]['late'], windows[ref]['late'])
    result = write_comparison(sweep_dir(config), 'sweep-u', comparison_frame(metrics, labels, 'maxvio_batch'),
                              final_frame(members, config.seeds, summaries), 'maxvio_batch', tests)
    logger.info('update-rate sweep done dir=%s members=%d', sweep_dir(config), len(members))
    return result


def sweep_alpha(config, alphas=ALPHAS, threads=None):
    """
    Auxiliary-loss balancing at several alpha values: MaxVio_global should not
    grow with alpha, and the largest alpha should pay in LM loss.
    """
    if not alphas:
        raise ContractError('alpha sweep needs at least one alpha')
    ordered = sorted(float(a) for a in alphas)
    members = [(f'alpha{_rate_label(a)}', member_config(config, f'alpha{_rate_label(a)}', strategy='aux', alpha=a))
               for a in ordered]
    summaries = train_members(members, config.seeds, threads)
    metrics = member_metrics(members, config.seeds)
    labels = [label for label, _ in members]
    final = final_frame(members, config.seeds, summaries)

    mean_vio = [float(final[final['member'] == label]['maxvio_global'].mean()) for label in labels]
    tests = {'maxvio_global_non_increasing': stats.non_increasing(mean_vio)}
    nonzero = [label for label, a in zip(labels, ordered) if a > 0]
    if len(nonzero) >= 2:
        largest, smallest = nonzero[-1], nonzero[0]
        tests['loss_cost'] = {
            'high': largest, 'low': smallest,
            'p_value': stats.one_sided_greater(final[final['member'] == largest]['final_lm_loss'],
                                               final[final['member'] == smallest]['final_lm_loss']),
        }
    result = write_comparison(sweep_dir(config), 'sweep-alpha', comparison_frame(metrics, labels, 'maxvio_batch'),
                              final, 'maxvio_batch', tests)
    logger.info('alpha sweep done dir=%s members=%d', sweep_dir(config), len(members))
    return result


def sweep_bias_variants(config, rates=(1e-3,), rules=('sign', 'proportional'),
                        forms=('additive', 'multiplicative'), threads=None):
    """Loss-free balancing over update rule, bias form and rate."""
    members = []
    for rule in rules:
        for form in forms:
            for u in rates:
                label = f'{rule}-{form}-u{_rate_label(u)}'
                members.append((label, member_config(config, label, strategy='loss_free', update_rule=rule,
                                                     bias_form=form, update_rate=float(u))))
    if not members:
        raise ContractError('bias-variant sweep has no members')
    summaries = train_members(members, config.seeds, threads)
    metrics = member_metrics(members, config.seeds)
    labels = [label for label, _ in members]
    final = final_frame(members, config.seeds, summaries)
    best = final.groupby('member')['perplexity'].mean().idxmin()
    result = write_comparison(sweep_dir(config), 'sweep-variants', comparison_frame(metrics, labels, 'maxvio_batch'),
                              final, 'maxvio_batch', {'lowest_perplexity': best})
    logger.info('bias-variant sweep done dir=%s members=%d', sweep_dir(config), len(members))
    return result


def computation_batch_profile(model, tokens, windows=WINDOWS, batch_size=8):
    """
    Layer-averaged MaxVio_computation_batch of `model` on held-out windows,
    for each computation-batch size (in samples): the mean over full windows
    and, when the samples do not divide evenly, the trailing window apart.
    """
    cfg = model.config
    if not cfg.moe_layers:
        raise ContractError('model has no MoE layers')
    samples = validation_windows(tokens, cfg.seq_len)
    per_sample = {layer: [] for layer in cfg.moe_layers}
    for start in range(0, samples.shape[0], batch_size):
        x, _ = split_batch(samples[start:start + batch_size], cfg.seq_len)
        routing = model.forward(x).routing
        for layer in cfg.moe_layers:
            per_sample[layer].append(sample_loads(routing[layer].assignment.mask, cfg.seq_len))
    counts = {layer: np.concatenate(blocks) for layer, blocks in per_sample.items()}
    profile = {}
    for window in windows:
        if window > samples.shape[0]:
            raise ContractError(f'window of {window} samples exceeds the {samples.shape[0]} validation samples')
        per_layer = [windowed_maxvio(counts[layer], window, cfg.seq_len) for layer in cfg.moe_layers]
        tails = [w.tail for w in per_layer if w.tail is not None]
        profile[int(window)] = {'mean': layer_average(w.mean for w in per_layer),
                                'tail': layer_average(tails) if tails else None}
    return profile


def sweep_computation_batch(config, windows=WINDOWS, strategies=('loss_free', 'aux'), threads=None):
    """
    Train each strategy per seed, then measure MaxVio_computation_batch on the
    validation stream across window sizes. Window size vs MaxVio is
    rank-correlated per member; at the largest window the auxiliary-loss
    member is tested for staying above loss-free balancing.
    """
    if not windows:
        raise ContractError('computation-batch sweep needs at least one window')
    windows = sorted(int(w) for w in windows)
    members = [(kind, member_config(config, kind, strategy=kind)) for kind in strategies]
    train_members(members, config.seeds, threads)
    _, val_tokens = split_corpus(corpus_for(config), config.val_tokens)

    rows = []
    for label, cfg in members:
        for seed in config.seeds:
            model = checkpoint.load(cfg.run_dir(seed) / 'checkpoint.bin')
            for window, value in computation_batch_profile(model, val_tokens, windows).items():
                rows.append({'member': label, 'seed': seed, 'window': window, 'maxvio': value['mean'],
                             'tail': value['tail']})
    long = pd.DataFrame(rows)
    long['tail'] = long['tail'].astype('float64')
    wide = long.groupby(['window', 'member'])['maxvio'].mean().unstack('member').reindex(
        columns=[label for label, _ in members])
    tails = long.groupby(['window', 'member'])['tail'].mean().unstack('member').reindex(
        columns=[label for label, _ in members])

    tests = {'spearman': {}}
    for label, _ in members:
        part = long[long['member'] == label]
        rho, p = stats.spearman(part['window'], part['maxvio'])
        tests['spearman'][label] = {'rho': rho, 'p_value': p}
    largest = long[long['window'] == windows[-1]]
    if {'loss_free', 'aux'} <= set(strategies):
        tests['aux_above_loss_free'] = stats.one_sided_greater(
            largest[largest['member'] == 'aux']['maxvio'], largest[largest['member'] == 'loss_free']['maxvio'])

    directory = sweep_dir(config)
    csv_path = directory / 'computation-batch.csv'
    try:
        wide.to_csv(csv_path, index_label='window')
        long.to_csv(directory / 'computation-batch-runs.csv', index=False)
    except OSError as exc:
        raise MoebalError(f'cannot write sweep results in {directory}: {exc}') from exc
    svg_path = plot([csv_path], directory / 'computation-batch.svg', title='MaxVio_computation_batch by window')
    summary = {'metric': 'maxvio_computation_batch', 'windows': windows,
               'members': {label: {str(w): float(v) for w, v in wide[label].items()} for label, _ in members},
               'tails': {label: {str(w): None if pd.isna(v) else float(v) for w, v in tails[label].items()}
                         for label, _ in members},
               'tests': tests}
    write_json(directory / 'summary.json', summary)
    logger.info('computation-batch sweep done dir=%s members=%d', directory, len(members))
    return {'csv': csv_path, 'svg': svg_path, 'summary': summary}
