"""
Expert-wise bias control and the auxiliary balance loss.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError
from .routing import BIAS_FORMS

logger = logging.getLogger(__name__)

UPDATE_RULES = ('sign', 'proportional')


@dataclass(frozen=True)
class ExpertBiasState:
    """
    Per-expert bias b_i together with the rule that moves it.

    Additive biases start at 0, multiplicative ones at 1. A state is replaced,
    never mutated, at each batch boundary.
    """

    bias: np.ndarray
    rule: str = 'sign'
    form: str = 'additive'
    update_rate: float = 1e-3
    updates: int = field(default=0)

    @classmethod
    def initial(cls, n_experts, rule='sign', form='additive', update_rate=1e-3):
        if rule not in UPDATE_RULES:
            raise ContractError(f'unknown update rule {rule!r}')
        if form not in BIAS_FORMS:
            raise ContractError(f'unknown bias form {form!r}')
        if update_rate < 0:
            raise ContractError(f'update rate must be >= 0, got {update_rate}')
        start = 1.0 if form == 'multiplicative' else 0.0
        return cls(np.full(n_experts, start), rule, form, float(update_rate))

    @property
    def n_experts(self):
        return self.bias.shape[0]


def load_violation(loads):
    """e_i = mean(c) - c_i."""
    loads = np.asarray(loads, dtype=np.float64)
    return loads.mean() - loads


def update_bias(state, loads):
    """Apply one step of the bias rule to the loads counted over a batch."""
    loads = np.asarray(loads)
    if loads.shape != (state.n_experts,):
        raise ContractError(f'loads length {loads.shape} != {state.n_experts} experts')
    if np.any(loads < 0):
        raise ContractError('loads must be non-negative')
    error = load_violation(loads)
    step = np.sign(error) if state.rule == 'sign' else error
    bias = state.bias + state.update_rate * step
    logger.debug('bias update rule=%s min=%.6f max=%.6f', state.rule, bias.min(), bias.max())
    return replace(state, bias=bias, updates=state.updates + 1)


@dataclass(frozen=True)
class AuxLossConfig:
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f'alpha must be >= 0, got {self.alpha}')


def load_fractions(mask, top_k):
    """f_i = N / (K T) * count_i, a constant with respect to the scores."""
    n_tokens, n_experts = mask.shape
    return mask.sum(axis=0) * (n_experts / (top_k * n_tokens))


def aux_loss(scores, assignment, cfg, seq_len=None):
    """
    alpha * sum_i f_i P_i. With `seq_len`, f and P are taken per sequence of
    that length and the loss is the mean over sequences.
    """
    n_tokens, n_experts = scores.values.shape
    if n_tokens == 0:
        raise ContractError('aux_loss over zero tokens')
    if assignment.mask.shape != (n_tokens, n_experts):
        raise ContractError(f'assignment {assignment.mask.shape} does not match scores {scores.values.shape}')
    seq_len = seq_len or n_tokens
    if n_tokens % seq_len:
        raise ContractError(f'{n_tokens} tokens do not split into sequences of {seq_len}')
    n_seq = n_tokens // seq_len
    mask = assignment.mask.reshape(n_seq, seq_len, n_experts)
    fractions = np.stack([load_fractions(m, assignment.top_k) for m in mask])
    probs = ad.mean(ad.reshape(scores.tensor, (n_seq, seq_len, n_experts)), axis=1)
    total = ad.sum(ad.mul(probs, ad.Tensor(fractions)))
    return ad.scale(total, cfg.alpha / n_seq)
