"""
MaxVio load-imbalance metrics at batch, computation-batch and global scope.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError

GRANULARITIES = ('batch', 'computation_batch', 'global')


@dataclass(frozen=True)
class LoadCounter:
    """Per-expert token counts observed over `tokens_seen` tokens."""

    counts: np.ndarray
    granularity: str = 'batch'
    tokens_seen: int = 0

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ContractError(f"unknown granularity '{self.granularity}'")

    @classmethod
    def empty(cls, n_experts, granularity='global'):
        return cls(np.zeros(n_experts, dtype=np.int64), granularity, 0)

    @classmethod
    def from_assignment(cls, assignment, granularity='batch'):
        return cls(assignment.loads(), granularity, assignment.n_tokens)

    def merge(self, other):
        if self.counts.shape != other.counts.shape:
            raise ContractError('cannot merge counters over different expert counts')
        return LoadCounter(self.counts + other.counts, self.granularity,
                           self.tokens_seen + other.tokens_seen)


def maxvio(counter):
    """(max_i c_i - mean_i c_i) / mean_i c_i."""
    if counter.tokens_seen <= 0:
        raise ContractError('maxvio over zero tokens')
    counts = np.asarray(counter.counts, dtype=np.float64)
    average = counts.mean()
    if average == 0:
        raise ContractError('maxvio with no assigned tokens')
    return float((counts.max() - average) / average)


def maxvio_batch(assignments):
    """One MaxVio value per step's assignment (or counter)."""
    return [maxvio(a if isinstance(a, LoadCounter) else LoadCounter.from_assignment(a))
            for a in assignments]


def maxvio_global(counter):
    return maxvio(counter)


def sample_loads(mask, seq_len):
    """Per-sample expert counts, shape (samples, experts)."""
    n_tokens, n_experts = mask.shape
    if seq_len < 1 or n_tokens % seq_len:
        raise ContractError(f'{n_tokens} tokens do not split into samples of {seq_len}')
    return mask.reshape(n_tokens // seq_len, seq_len, n_experts).sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class WindowedMaxVio:
    """MaxVio per full window; a shorter trailing window is kept apart."""

    values: list
    tail: float = None
    window_samples: int = 0

    @property
    def mean(self):
        if not self.values:
            raise ContractError('no full window to average')
        return float(np.mean(self.values))


def windowed_maxvio(per_sample_counts, window_samples, tokens_per_sample):
    per_sample_counts = np.asarray(per_sample_counts)
    if window_samples < 1:
        raise ContractError(f'window must hold at least one sample, got {window_samples}')
    n_samples = per_sample_counts.shape[0]
    values = []
    for start in range(0, n_samples - window_samples + 1, window_samples):
        block = per_sample_counts[start:start + window_samples]
        values.append(maxvio(LoadCounter(block.sum(axis=0), 'computation_batch',
                                         window_samples * tokens_per_sample)))
    tail = None
    leftover = n_samples % window_samples
    if leftover:
        block = per_sample_counts[n_samples - leftover:]
        tail = maxvio(LoadCounter(block.sum(axis=0), 'computation_batch', leftover * tokens_per_sample))
    return WindowedMaxVio(values, tail, window_samples)


def maxvio_computation_batch(assignment, seq_len, micro_batch_size, ep_parallel):
    """
    MaxVio over computation batches of micro_batch_size * ep_parallel samples,
    taken in order from the step's data.
    """
    if micro_batch_size < 1 or ep_parallel < 1:
        raise ContractError('micro_batch_size and ep_parallel must be positive')
    per_sample = sample_loads(assignment.mask, seq_len)
    return windowed_maxvio(per_sample, micro_batch_size * ep_parallel, seq_len)


def layer_average(values):
    values = list(values)
    if not values:
        raise ContractError('layer_average of no layers')
    return float(np.mean(values))
