"""
Gating scores and routing assignments.

Token-choice routing (vanilla and loss-free) picks, for every token, the K
experts with the largest biased score; the bias only steers the selection and
never enters the gate weight. Expert Choice lets every expert pick its
top-capacity tokens inside a chunk, which balances load perfectly but makes a
token's assignment depend on its neighbours, including later ones.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, DimensionError, MoebalError

logger = logging.getLogger(__name__)

GATE_KINDS = ('sigmoid', 'softmax')
BIAS_FORMS = ('additive', 'multiplicative')


@dataclass(frozen=True)
class RoutingScores:
    """Per-token, per-expert gating scores s_{i,t} (tokens x experts)."""

    tensor: ad.Tensor
    gate_kind: str = 'sigmoid'

    @property
    def values(self):
        return self.tensor.data

    @property
    def n_tokens(self):
        return self.tensor.shape[0]

    @property
    def n_experts(self):
        return self.tensor.shape[1]


@dataclass(frozen=True)
class RoutingAssignment:
    """
    Hard selection mask plus the gate weights g_{i,t}.

    `mask[t, i]` is True when token t is routed to expert i. Gate weights are
    the original scores on selected pairs and zero elsewhere.
    """

    mask: np.ndarray
    gate_weights: ad.Tensor
    top_k: int
    kind: str = 'token_choice'

    @property
    def n_tokens(self):
        return self.mask.shape[0]

    @property
    def n_experts(self):
        return self.mask.shape[1]

    def selected(self, token):
        return tuple(int(i) for i in np.flatnonzero(self.mask[token]))

    def tokens_of(self, expert):
        return np.flatnonzero(self.mask[:, expert])

    def loads(self):
        return self.mask.sum(axis=0).astype(np.int64)


@dataclass(frozen=True)
class ExpertChoiceConfig:
    """Chunking for Expert Choice. `chunk_size=None` means one chunk per batch."""

    chunk_size: int = None
    shuffle: bool = False
    shuffle_seed: int = 0


def compute_scores(hidden, centroids, gate_kind='sigmoid'):
    """s_{i,t} = G(u_t . e_i) for hidden (T x d) and centroids (d x N)."""
    if gate_kind not in GATE_KINDS:
        raise ContractError(f'unknown gate kind {gate_kind!r}')
    if hidden.ndim != 2 or centroids.ndim != 2 or hidden.shape[1] != centroids.shape[0]:
        raise DimensionError(f'scores: hidden {hidden.shape} vs centroids {centroids.shape}')
    logits = ad.matmul(hidden, centroids)
    gated = ad.sigmoid(logits) if gate_kind == 'sigmoid' else ad.softmax(logits, axis=-1)
    return RoutingScores(gated, gate_kind)


def _gate_weights(scores, mask, normalize):
    gates = ad.mul(scores.tensor, ad.Tensor(mask.astype(np.float64)))
    return ad.normalize_rows(gates) if normalize else gates


def biased_scores(values, bias, form='additive'):
    if form == 'additive':
        return values + bias
    if form == 'multiplicative':
        return values * bias
    raise ContractError(f'unknown bias form {form!r}')


def topk_select(scores, bias, top_k, form='additive', normalize=False):
    """
    Select, per token, the `top_k` experts with the largest biased score.
    Ties go to the lowest expert index.
    """
    n_tokens, n_experts = scores.values.shape
    if top_k > n_experts or top_k < 1:
        raise ContractError(f'top_k={top_k} must lie in [1, {n_experts}]')
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (n_experts,):
        raise ContractError(f'bias length {bias.shape} != {n_experts} experts')
    ranked = np.argsort(-biased_scores(scores.values, bias, form), axis=1, kind='stable')
    mask = np.zeros((n_tokens, n_experts), dtype=bool)
    np.put_along_axis(mask, ranked[:, :top_k], True, axis=1)
    return RoutingAssignment(mask, _gate_weights(scores, mask, normalize), top_k)


def expert_choice_select(scores, cfg, top_k):
    """
    Each expert takes its top-capacity tokens per chunk, capacity being
    floor(chunk_tokens * K / N). Ties go to the lowest token index.
    """
    values = scores.values
    n_tokens, n_experts = values.shape
    if top_k > n_experts or top_k < 1:
        raise ContractError(f'top_k={top_k} must lie in [1, {n_experts}]')
    chunk = cfg.chunk_size or n_tokens
    if chunk < 1:
        raise ContractError(f'chunk_size must be positive, got {chunk}')
    if (min(chunk, n_tokens) * top_k) // n_experts < 1:
        raise ContractError(
            f'expert capacity is 0 for chunk of {min(chunk, n_tokens)} tokens, K={top_k}, N={n_experts}')
    order = np.arange(n_tokens)
    if cfg.shuffle:
        order = np.random.default_rng(cfg.shuffle_seed).permutation(n_tokens)
    mask = np.zeros((n_tokens, n_experts), dtype=bool)
    experts = np.arange(n_experts)
    for start in range(0, n_tokens, chunk):
        ids = np.sort(order[start:start + chunk])
        capacity = (len(ids) * top_k) // n_experts
        if capacity == 0:
            logger.warning('expert choice tail chunk of %d tokens has zero capacity; left unassigned', len(ids))
            continue
        picks = np.argsort(-values[ids], axis=0, kind='stable')[:capacity]
        mask[ids[picks], experts[None, :]] = True
    return RoutingAssignment(mask, _gate_weights(scores, mask, False), top_k, kind='expert_choice')


@dataclass(frozen=True)
class CausalityReport:
    violations: int
    trials: int
    prefix_len: int


def causality_probe(router, tokens, prefix_len, trials, vocab_size=256, seed=0):
    """
    Resample every token after `prefix_len` and count the trials in which the
    routing of any prefix token changes. `router` maps a token array to a
    RoutingAssignment with one row per token.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if not 0 <= prefix_len < tokens.shape[-1]:
        raise ContractError(f'prefix_len {prefix_len} must be < stream length {tokens.shape[-1]}')
    rng = np.random.default_rng(seed)
    reference = router(tokens).mask[:prefix_len].copy()
    violations = 0
    for _ in range(trials):
        perturbed = tokens.copy()
        perturbed[prefix_len:] = rng.integers(0, vocab_size, size=tokens.shape[-1] - prefix_len)
        if not np.array_equal(router(perturbed).mask[:prefix_len], reference):
            violations += 1
    return CausalityReport(violations, trials, prefix_len)


def lookup_router(score_table, select):
    """
    Router closure whose scores are a fixed per-token-id table row, selected
    with `select(scores) -> RoutingAssignment`.
    """
    table = np.asarray(score_table, dtype=np.float64)

    def router(tokens):
        return select(RoutingScores(ad.Tensor(table[np.asarray(tokens)])))

    return router


def dump_assignment_csv(assignment, path):
    """Write (token_index, expert_index, gate_weight) rows for selected pairs."""
    tokens, experts = np.nonzero(assignment.mask)
    try:
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh)
            writer.writerow(['token_index', 'expert_index', 'gate_weight'])
            for t, i in zip(tokens, experts):
                writer.writerow([int(t), int(i), repr(float(assignment.gate_weights.data[t, i]))])
    except OSError as exc:
        raise MoebalError(f'cannot write assignment CSV {path}: {exc}') from exc


STRATEGIES = ('vanilla', 'aux', 'loss_free', 'ec')


@dataclass(frozen=True)
class RoutingStrategy:
    """
    How one MoE layer turns scores into an assignment for one forward pass.
    `bias` is read-only here and only consulted by the loss-free strategy.
    """

    kind: str
    top_k: int
    bias: np.ndarray = None
    bias_form: str = 'additive'
    normalize_topk: bool = False
    expert_choice: ExpertChoiceConfig = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ContractError(f'unknown routing strategy {self.kind!r}')

    def route(self, scores):
        if self.kind == 'ec':
            return expert_choice_select(scores, self.expert_choice or ExpertChoiceConfig(), self.top_k)
        if self.kind == 'loss_free' and self.bias is not None:
            return topk_select(scores, self.bias, self.top_k, self.bias_form, self.normalize_topk)
        return topk_select(scores, np.zeros(scores.n_experts), self.top_k, normalize=self.normalize_topk)
