"""
Future-token leakage through Expert Choice routing.

An Expert Choice layer whose experts each take exactly C = KT/N of T tokens
can encode log2(binom(T, C)^N) bits in its assignment, which exceeds
K log2((1 - R) / R) bits per token for sparsity R = K / N. The channel below
shows that later tokens in a chunk can steer which experts pick an earlier
token, so that token can read a message out of its own routing.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from . import autodiff as ad
from .exceptions import ContractError
from .routing import ExpertChoiceConfig, RoutingScores, expert_choice_select

logger = logging.getLogger(__name__)

HIGH, MID, LOW = 0.9, 0.5, 0.1


@dataclass(frozen=True)
class LeakageBoundInput:
    top_k: float
    n_experts: int
    layers: int = 1

    @property
    def sparsity(self):
        return self.top_k / self.n_experts


def capacity_bound(inp):
    """layers * K * log2((1 - R) / R), in bits per token."""
    r = inp.sparsity
    if r >= 1:
        raise ContractError(f'sparsity K/N = {r} must be < 1')
    if r <= 0 or inp.layers < 1:
        raise ContractError(f'sparsity must be > 0 and layers >= 1, got R={r}, layers={inp.layers}')
    return inp.layers * inp.top_k * math.log2((1.0 - r) / r)


def expert_capacity(n_tokens, n_experts, top_k):
    return (n_tokens * top_k) // n_experts


def exact_assignment_bits(n_tokens, n_experts, top_k):
    """log2(binom(T, C)^N) / T: bits per token an Expert Choice layer can carry."""
    capacity = expert_capacity(n_tokens, n_experts, top_k)
    return n_experts * math.log2(comb(n_tokens, capacity, exact=True)) / n_tokens


def _receiver_chunk(cfg, n_tokens, receiver=0):
    order = np.arange(n_tokens)
    if cfg.shuffle:
        order = np.random.default_rng(cfg.shuffle_seed).permutation(n_tokens)
    chunk = cfg.chunk_size or n_tokens
    where = int(np.flatnonzero(order == receiver)[0])
    start = (where // chunk) * chunk
    return np.sort(order[start:start + chunk])


def channel_limit(cfg, n_experts, top_k, n_tokens):
    """
    Longest message the channel accepts: one bit per expert, further capped
    at half the assignment information of the receiver's chunk.
    """
    members = _receiver_chunk(cfg, n_tokens)
    capacity = expert_capacity(members.size, n_experts, top_k)
    if capacity < 1 or members.size - 1 < capacity:
        return 0
    chunk_bits = exact_assignment_bits(members.size, n_experts, top_k) * members.size
    return min(n_experts, math.floor(0.5 * chunk_bits))


@dataclass(frozen=True)
class ChannelMessage:
    bits: tuple
    scores: np.ndarray
    decoded: tuple

    @property
    def errors(self):
        return sum(a != b for a, b in zip(self.bits, self.decoded))


def encode(bits, cfg, n_experts, top_k, n_tokens, receiver=0):
    """
    Scores in which only tokens after `receiver` depend on the message: for a
    0 bit on expert e, `capacity` later tokens outscore the receiver on e; for
    a 1 bit, every later token scores below it.
    """
    members = _receiver_chunk(cfg, n_tokens, receiver)
    later = members[members > receiver]
    capacity = expert_capacity(members.size, n_experts, top_k)
    scores = np.full((n_tokens, n_experts), LOW)
    scores[receiver] = MID
    for expert, bit in enumerate(bits):
        if not bit:
            scores[later[:capacity], expert] = HIGH
    return scores


def decode(assignment, n_bits, receiver=0):
    return tuple(int(assignment.mask[receiver, e]) for e in range(n_bits))


def channel_transmit(bits, ec_config, n_experts, top_k, n_tokens):
    """Send `bits` to token 0 purely through an Expert Choice assignment."""
    bits = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in bits):
        raise ContractError('message must consist of 0/1 bits')
    ec_config = ec_config or ExpertChoiceConfig()
    limit = channel_limit(ec_config, n_experts, top_k, n_tokens)
    if len(bits) > limit:
        raise ContractError(f'message of {len(bits)} bits exceeds channel limit {limit}')
    scores = encode(bits, ec_config, n_experts, top_k, n_tokens)
    assignment = expert_choice_select(RoutingScores(ad.Tensor(scores)), ec_config, top_k)
    message = ChannelMessage(bits, scores, decode(assignment, len(bits)))
    logger.debug('channel bits=%d errors=%d', len(bits), message.errors)
    return message
