"""
Toy decoder-only MoE language model with shared and routed experts.

Block 0 carries a dense FFN; every later block carries an MoE layer
h_t = u_t + sum_shared FFN(u_t) + sum_selected g_{i,t} FFN_i(u_t), where the
experts and the router read a layer-normalized copy of u_t.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .balancer import UPDATE_RULES, ExpertBiasState, update_bias
from .exceptions import ContractError, DimensionError
from .routing import (
    BIAS_FORMS, GATE_KINDS, STRATEGIES, ExpertChoiceConfig, RoutingStrategy, compute_scores,
)

logger = logging.getLogger(__name__)

AUX_SCOPES = ('sequence', 'batch')
_MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 1
    seq_len: int = 128
    d_ff: int = 128
    n_routed: int = 8
    top_k: int = 2
    n_shared: int = 1
    d_expert: int = 32
    gate: str = 'sigmoid'
    strategy: str = 'vanilla'
    alpha: float = 1e-3
    aux_scope: str = 'sequence'
    update_rule: str = 'sign'
    bias_form: str = 'additive'
    update_rate: float = 1e-3
    ec_chunk_size: int = None
    ec_shuffle: bool = False
    normalize_topk: bool = False
    init_std: float = 0.006
    seed: int = 0

    def __post_init__(self):
        for name in ('vocab_size', 'd_model', 'n_layers', 'n_heads', 'seq_len', 'd_ff',
                     'n_routed', 'top_k', 'd_expert'):
            if getattr(self, name) < 1:
                raise ContractError(f'{name} must be positive, got {getattr(self, name)}')
        if self.n_shared < 0:
            raise ContractError('n_shared must be >= 0')
        if self.top_k > self.n_routed:
            raise ContractError(f'top_k={self.top_k} exceeds n_routed={self.n_routed}')
        if self.d_model % self.n_heads:
            raise ContractError(f'd_model={self.d_model} not divisible by n_heads={self.n_heads}')
        choices = {'gate': GATE_KINDS, 'strategy': STRATEGIES, 'aux_scope': AUX_SCOPES,
                   'update_rule': UPDATE_RULES, 'bias_form': BIAS_FORMS}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ContractError(f'{name}={getattr(self, name)!r} not in {allowed}')
        if self.alpha < 0 or self.update_rate < 0 or self.init_std <= 0:
            raise ContractError('alpha and update_rate must be >= 0, init_std > 0')
        if self.ec_chunk_size is not None and self.ec_chunk_size < 1:
            raise ContractError('ec_chunk_size must be positive')

    @property
    def granularity(self):
        return self.d_ff / self.d_expert

    @property
    def moe_layers(self):
        return list(range(1, self.n_layers))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f'unknown model config keys: {sorted(unknown)}')
        return cls(**data)


PRESETS = {
    'desk': {},
    'ref-1b': {
        'vocab_size': 32064, 'd_model': 1024, 'n_layers': 10, 'n_heads': 8, 'seq_len': 2048,
        'd_ff': 4096, 'n_routed': 64, 'top_k': 6, 'n_shared': 2, 'd_expert': 768,
    },
}


@dataclass
class MoELayerParams:
    norm_gain: ad.Tensor
    norm_bias: ad.Tensor
    centroids: ad.Tensor
    routed: list
    shared: list
    gate_kind: str = 'sigmoid'
    bias_state: ExpertBiasState = None


@dataclass(frozen=True)
class LayerRouting:
    scores: object
    assignment: object


@dataclass
class ForwardResult:
    logits: ad.Tensor
    routing: dict = field(default_factory=dict)


def expert_ffn(x, w_in, w_out):
    return ad.matmul(ad.silu(ad.matmul(x, w_in)), w_out)


def moe_layer_forward(u, params, strategy):
    """Residual plus shared and gated routed experts; returns (h, LayerRouting)."""
    n_tokens = u.shape[0]
    x = ad.layer_norm(u, params.norm_gain, params.norm_bias)
    scores = compute_scores(x, params.centroids, params.gate_kind)
    assignment = strategy.route(scores)
    out = u
    for w_in, w_out in params.shared:
        out = ad.add(out, expert_ffn(x, w_in, w_out))
    for expert, (w_in, w_out) in enumerate(params.routed):
        index = assignment.tokens_of(expert)
        if index.size == 0:
            continue
        y = expert_ffn(ad.take_rows(x, index), w_in, w_out)
        gates = ad.take(assignment.gate_weights, index, np.full(index.size, expert))
        out = ad.add(out, ad.scatter_rows(ad.scale_rows(y, gates), index, n_tokens))
    return out, LayerRouting(scores, assignment)


def causal_mask(seq_len):
    return np.triu(np.full((seq_len, seq_len), _MASK_VALUE), k=1)


def attention(x, wq, wk, wv, wo, batch, seq_len, n_heads):
    d_model = x.shape[1]
    d_head = d_model // n_heads

    def heads(t):
        t = ad.reshape(t, (batch, seq_len, n_heads, d_head))
        return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (batch * n_heads, seq_len, d_head))

    q, k, v = heads(ad.matmul(x, wq)), heads(ad.matmul(x, wk)), heads(ad.matmul(x, wv))
    logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d_head))
    weights = ad.softmax(ad.add(logits, ad.Tensor(causal_mask(seq_len))), axis=-1)
    mixed = ad.reshape(ad.matmul(weights, v), (batch, n_heads, seq_len, d_head))
    mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (batch * seq_len, d_model))
    return ad.matmul(mixed, wo)


def param_shapes(config):
    """Name -> shape of every parameter, in creation order."""
    d = config.d_model
    shapes = {}

    def normal(name, *shape):
        shapes[name] = shape

    def norm(prefix):
        shapes[f'{prefix}.gain'] = (d,)
        shapes[f'{prefix}.bias'] = (d,)

    normal('tok_emb', config.vocab_size, d)
    normal('pos_emb', config.seq_len, d)
    for layer in range(config.n_layers):
        prefix = f'blocks.{layer}'
        norm(f'{prefix}.attn_norm')
        for w in ('wq', 'wk', 'wv', 'wo'):
            normal(f'{prefix}.attn.{w}', d, d)
        if layer == 0:
            norm(f'{prefix}.ffn.norm')
            normal(f'{prefix}.ffn.w_in', d, config.d_ff)
            normal(f'{prefix}.ffn.w_out', config.d_ff, d)
            continue
        norm(f'{prefix}.moe.norm')
        normal(f'{prefix}.moe.centroids', d, config.n_routed)
        for kind, count in (('shared', config.n_shared), ('routed', config.n_routed)):
            for i in range(count):
                normal(f'{prefix}.moe.{kind}.{i}.w_in', d, config.d_expert)
                normal(f'{prefix}.moe.{kind}.{i}.w_out', config.d_expert, d)
    norm('final_norm')
    normal('lm_head', d, config.vocab_size)
    return shapes


def init_params(config):
    """Normal(0, init_std) everywhere except layer-norm gains (1) and shifts (0)."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith('norm.gain'):
            data = np.ones(shape)
        elif name.endswith('norm.bias'):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, config.init_std, size=shape)
        params[name] = ad.Tensor(data, requires_grad=True, name=name)
    return params


class MoELanguageModel:
    """Parameters, per-layer bias states and the forward pass."""

    def __init__(self, config, params=None, bias_states=None, step=0):
        self.config = config
        self.params = params if params is not None else init_params(config)
        self.bias_states = bias_states if bias_states is not None else {
            layer: ExpertBiasState.initial(config.n_routed, config.update_rule,
                                           config.bias_form, config.update_rate)
            for layer in config.moe_layers
        }
        self.step = step

    def parameters(self):
        return list(self.params.values())

    def layer_params(self, layer):
        p, prefix = self.params, f'blocks.{layer}.moe'
        experts = {
            kind: [(p[f'{prefix}.{kind}.{i}.w_in'], p[f'{prefix}.{kind}.{i}.w_out']) for i in range(count)]
            for kind, count in (('shared', self.config.n_shared), ('routed', self.config.n_routed))
        }
        return MoELayerParams(p[f'{prefix}.norm.gain'], p[f'{prefix}.norm.bias'], p[f'{prefix}.centroids'],
                              experts['routed'], experts['shared'], self.config.gate,
                              self.bias_states.get(layer))

    def strategy_for(self, layer, step):
        cfg = self.config
        expert_choice = None
        if cfg.strategy == 'ec':
            seed = int(np.random.SeedSequence([cfg.seed, step, layer]).generate_state(1)[0])
            expert_choice = ExpertChoiceConfig(cfg.ec_chunk_size, cfg.ec_shuffle, seed)
        state = self.bias_states.get(layer)
        return RoutingStrategy(cfg.strategy, cfg.top_k, None if state is None else state.bias,
                               cfg.bias_form, cfg.normalize_topk, expert_choice)

    def forward(self, tokens, step=None):
        """Logits of shape (batch * seq, vocab) for a (batch, seq) token array."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise DimensionError(f'expected (batch, seq) tokens, got shape {tokens.shape}')
        batch, seq_len = tokens.shape
        cfg, p = self.config, self.params
        if seq_len > cfg.seq_len:
            raise DimensionError(f'sequence of {seq_len} exceeds seq_len={cfg.seq_len}')
        step = self.step if step is None else step
        positions = np.tile(np.arange(seq_len), batch)
        x = ad.add(ad.embedding_lookup(p['tok_emb'], tokens.reshape(-1)),
                   ad.embedding_lookup(p['pos_emb'], positions))
        routing = {}
        for layer in range(cfg.n_layers):
            prefix = f'blocks.{layer}'
            normed = ad.layer_norm(x, p[f'{prefix}.attn_norm.gain'], p[f'{prefix}.attn_norm.bias'])
            x = ad.add(x, attention(normed, *(p[f'{prefix}.attn.{w}'] for w in ('wq', 'wk', 'wv', 'wo')),
                                    batch, seq_len, cfg.n_heads))
            if layer == 0:
                h = ad.layer_norm(x, p[f'{prefix}.ffn.norm.gain'], p[f'{prefix}.ffn.norm.bias'])
                x = ad.add(x, expert_ffn(h, p[f'{prefix}.ffn.w_in'], p[f'{prefix}.ffn.w_out']))
            else:
                x, routing[layer] = moe_layer_forward(x, self.layer_params(layer), self.strategy_for(layer, step))
        x = ad.layer_norm(x, p['final_norm.gain'], p['final_norm.bias'])
        return ForwardResult(ad.matmul(x, p['lm_head']), routing)

    def update_biases(self, loads_by_layer):
        for layer, loads in loads_by_layer.items():
            self.bias_states[layer] = update_bias(self.bias_states[layer], loads)

    def bias_extrema(self):
        if not self.bias_states:
            return 0.0, 0.0
        values = np.concatenate([s.bias for s in self.bias_states.values()])
        return float(values.min()), float(values.max())

    def config_blob(self):
        return json.dumps({'model': self.config.to_dict(), 'step': self.step,
                           'bias_updates': {str(k): s.updates for k, s in self.bias_states.items()}},
                          sort_keys=True)


def model_router(model, layer):
    """Router closure over one MoE layer of `model`, for a single token stream."""
    if layer not in model.config.moe_layers:
        raise ContractError(f'layer {layer} is not an MoE layer')

    def router(tokens):
        return model.forward(np.asarray(tokens)[None, :]).routing[layer].assignment

    return router
