"""
One optimizer step and validation for the MoE language model.
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .balancer import AuxLossConfig, aux_loss
from .exceptions import ContractError, DimensionError, NonFiniteError
from .metrics import LoadCounter, layer_average, maxvio, sample_loads, windowed_maxvio

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainRecord:
    step: int
    lm_loss: float
    aux_loss: float
    maxvio_batch: float
    layer_maxvio: tuple
    maxvio_computation_batch: float
    bias_min: float
    bias_max: float
    maxvio_comp_tail: float = None
    wall_ms: float = 0.0


@dataclass(frozen=True)
class EvalResult:
    perplexity: float
    maxvio_global: float
    mean_nll: float
    tokens: int
    layer_maxvio: tuple


def split_batch(batch, seq_len):
    """Rows of seq_len + 1 tokens -> (inputs, next-token targets)."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or batch.shape[1] != seq_len + 1:
        raise DimensionError(f'batch must have shape (n, {seq_len + 1}), got {batch.shape}')
    return batch[:, :-1], batch[:, 1:]


def _ensure_finite(value, what, step):
    if not math.isfinite(value):
        raise NonFiniteError(f'{what} is {value} at step {step}')


def train_step(batch, model, optimizer, micro_batch_size=None, ep_parallel=1):
    """
    Forward/backward over the micro-batches of `batch`, one Adam update, then,
    for loss-free balancing, one bias update from the loads of the whole batch.
    """
    started = time.perf_counter()
    cfg = model.config
    inputs, targets = split_batch(batch, cfg.seq_len)
    n_samples = inputs.shape[0]
    micro = micro_batch_size or n_samples
    if n_samples % micro:
        raise ContractError(f'batch of {n_samples} samples does not split into micro-batches of {micro}')
    use_aux = cfg.strategy == 'aux'
    aux_cfg = AuxLossConfig(cfg.alpha)
    aux_seq_len = cfg.seq_len if cfg.aux_scope == 'sequence' else None
    step = model.step

    loads = {layer: np.zeros(cfg.n_routed, dtype=np.int64) for layer in cfg.moe_layers}
    per_sample = {layer: [] for layer in cfg.moe_layers}
    lm_total = aux_total = 0.0
    optimizer.zero_grad()
    for start in range(0, n_samples, micro):
        x, y = inputs[start:start + micro], targets[start:start + micro]
        weight = x.shape[0] / n_samples
        with ad.Tape():
            result = model.forward(x, step=step)
            lm = ad.cross_entropy(result.logits, y.reshape(-1))
            loss = lm
            if use_aux:
                for routed in result.routing.values():
                    term = aux_loss(routed.scores, routed.assignment, aux_cfg, aux_seq_len)
                    aux_total += weight * term.item()
                    loss = ad.add(loss, term)
            loss = ad.scale(loss, weight)
        _ensure_finite(lm.item(), 'LM loss', step)
        ad.backward(loss)
        lm_total += weight * lm.item()
        for layer, routed in result.routing.items():
            loads[layer] += routed.assignment.loads()
            per_sample[layer].append(sample_loads(routed.assignment.mask, cfg.seq_len))
    optimizer.step()
    if cfg.strategy == 'loss_free':
        model.update_biases(loads)
    model.step += 1

    tokens = inputs.size
    layer_values = tuple(maxvio(LoadCounter(loads[layer], 'batch', tokens)) for layer in cfg.moe_layers)
    window = micro * ep_parallel
    comp_values, tail_values = [], []
    for layer in cfg.moe_layers:
        windows = windowed_maxvio(np.concatenate(per_sample[layer]), window, cfg.seq_len)
        if windows.values:
            comp_values.append(windows.mean)
        if windows.tail is not None:
            tail_values.append(windows.tail)
    comp_tail = layer_average(tail_values) if tail_values else None
    if comp_tail is not None:
        logger.debug('step=%d computation-batch tail samples=%d window=%d maxvio=%.4f',
                     step, n_samples % window, window, comp_tail)
    bias_min, bias_max = model.bias_extrema()
    record = TrainRecord(
        step=step,
        lm_loss=lm_total,
        aux_loss=aux_total,
        maxvio_batch=layer_average(layer_values) if layer_values else 0.0,
        layer_maxvio=layer_values,
        maxvio_computation_batch=layer_average(comp_values) if comp_values else None,
        maxvio_comp_tail=comp_tail,
        bias_min=bias_min,
        bias_max=bias_max,
        wall_ms=(time.perf_counter() - started) * 1000.0,
    )
    return record


def validation_windows(tokens, seq_len):
    """Non-overlapping (seq_len + 1)-token windows whose targets tile the stream."""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    count = (tokens.size - 1) // seq_len
    if count < 1:
        raise ContractError(f'validation stream of {tokens.size} tokens is shorter than seq_len + 1')
    return np.stack([tokens[i * seq_len:i * seq_len + seq_len + 1] for i in range(count)])


def evaluate(model, tokens, batch_size=8):
    """Perplexity = exp(mean token NLL) and layer-averaged MaxVio_global."""
    cfg = model.config
    windows = validation_windows(tokens, cfg.seq_len)
    counters = {layer: LoadCounter.empty(cfg.n_routed) for layer in cfg.moe_layers}
    nll_sum = 0.0
    n_tokens = 0
    for start in range(0, windows.shape[0], batch_size):
        x, y = split_batch(windows[start:start + batch_size], cfg.seq_len)
        result = model.forward(x)
        nll_sum += ad.cross_entropy(result.logits, y.reshape(-1), reduction='sum').item()
        n_tokens += y.size
        for layer, routed in result.routing.items():
            counters[layer] = counters[layer].merge(LoadCounter.from_assignment(routed.assignment, 'global'))
    mean_nll = nll_sum / n_tokens
    layer_values = tuple(maxvio(counters[layer]) for layer in cfg.moe_layers)
    return EvalResult(
        perplexity=math.exp(mean_nll),
        maxvio_global=layer_average(layer_values) if layer_values else 0.0,
        mean_nll=mean_nll,
        tokens=n_tokens,
        layer_maxvio=layer_values,
    )
