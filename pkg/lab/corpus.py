"""
Token streams: a seeded order-2 Markov byte source and raw-file ingestion.

The Markov source draws successors from a Zipf-skewed alphabet, so a few byte
values dominate the stream. That skew is what pushes an unbalanced router
towards a handful of experts.
"""

import logging
from pathlib import Path

import numpy as np

from moe.exceptions import ContractError, MoebalError

logger = logging.getLogger(__name__)

CORPUS_KINDS = ('markov2', 'file')


def markov2(size, seed, alphabet_size=32, branching=4, skew=1.2):
    """`size` byte tokens from a random order-2 Markov chain."""
    if size < 2:
        raise ContractError(f'corpus size must be >= 2, got {size}')
    rng = np.random.default_rng(seed)
    symbols = rng.choice(256, size=alphabet_size, replace=False)
    popularity = 1.0 / np.arange(1, alphabet_size + 1) ** skew
    popularity /= popularity.sum()
    successors = rng.choice(alphabet_size, size=(alphabet_size, alphabet_size, branching), p=popularity)
    weights = rng.dirichlet(np.ones(branching), size=(alphabet_size, alphabet_size))
    cumulative = np.cumsum(weights, axis=-1)
    draws = rng.random(size)
    stream = np.empty(size, dtype=np.int64)
    a, b = rng.choice(alphabet_size, size=2, p=popularity)
    stream[0], stream[1] = a, b
    for i in range(2, size):
        pick = min(int(np.searchsorted(cumulative[a, b], draws[i], side='right')), branching - 1)
        a, b = b, successors[a, b, pick]
        stream[i] = b
    return symbols[stream].astype(np.int64)


def from_file(path):
    """One token per byte of the file."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise MoebalError(f'cannot read corpus file {path}: {exc}') from exc
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def gen_corpus(kind, size=None, seed=0, path=None, alphabet_size=32):
    if kind == 'markov2':
        return markov2(size, seed, alphabet_size)
    if kind == 'file':
        if not path:
            raise ContractError('file corpus needs a path')
        return from_file(path)
    raise ContractError(f'unknown corpus kind {kind!r}')


def corpus_for(config):
    return gen_corpus(config.corpus, config.corpus_size, config.corpus_seed,
                      config.corpus_path, config.alphabet_size)


def split_corpus(tokens, val_tokens):
    """Hold out the tail of the stream for validation."""
    if val_tokens >= tokens.size:
        raise ContractError(f'val_tokens={val_tokens} leaves no training data out of {tokens.size}')
    return tokens[:-val_tokens], tokens[-val_tokens:]


def sample_batch(tokens, batch_size, seq_len, rng):
    """`batch_size` random windows of seq_len + 1 tokens."""
    if tokens.size < seq_len + 1:
        raise ContractError(f'training stream of {tokens.size} tokens is shorter than seq_len + 1')
    starts = rng.integers(0, tokens.size - seq_len, size=batch_size)
    return np.stack([tokens[s:s + seq_len + 1] for s in starts])


def write_tokens(tokens, path):
    path = Path(path)
    try:
        path.write_bytes(np.asarray(tokens, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise MoebalError(f'cannot write corpus {path}: {exc}') from exc
    logger.info('corpus written path=%s tokens=%d', path, len(tokens))
    return path
