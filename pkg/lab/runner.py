"""
A single training run: corpus, model, loop, checkpoint, validation summary.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from moe import checkpoint
from moe.model import MoELanguageModel
from moe.optim import Adam
from moe.training import evaluate, train_step

from .corpus import corpus_for, sample_batch, split_corpus
from .records import RunFiles, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunResult:
    run_dir: Path
    summary: dict


def run(config, seed=None):
    """Train one seed of `config`; deterministic given the seed."""
    seed = config.seeds[0] if seed is None else seed
    config = config.with_seed(seed)
    cfg = config.model
    run_dir = config.run_dir(seed)
    train_tokens, val_tokens = split_corpus(corpus_for(config), config.val_tokens)

    model = MoELanguageModel(cfg)
    optimizer = Adam(model.parameters(), lr=config.lr, warmup_steps=config.warmup_steps)
    rng = np.random.default_rng([seed, 1])
    logger.info('run start name=%s seed=%d strategy=%s steps=%d dir=%s',
                config.run_name, seed, cfg.strategy, config.steps, run_dir)

    last = None
    with RunFiles(run_dir, cfg.moe_layers, config.bias_history) as files:
        for _ in range(config.steps):
            batch = sample_batch(train_tokens, config.batch_size, cfg.seq_len, rng)
            last = train_step(batch, model, optimizer, config.micro, config.ep_parallel)
            files.write(last, model.bias_states)
            if (last.step + 1) % config.eval_every == 0:
                logger.info('step=%d lm_loss=%.4f aux_loss=%.5f maxvio_batch=%.3f',
                            last.step, last.lm_loss, last.aux_loss, last.maxvio_batch)

    checkpoint.save(model, run_dir / 'checkpoint.bin')
    result = evaluate(model, val_tokens)
    summary = {
        'run_name': config.run_name,
        'seed': seed,
        'strategy': cfg.strategy,
        'steps': config.steps,
        'perplexity': result.perplexity,
        'maxvio_global': result.maxvio_global,
        'layer_maxvio_global': list(result.layer_maxvio),
        'final_lm_loss': None if last is None else last.lm_loss,
        'model': cfg.to_dict(),
    }
    write_json(run_dir / 'summary.json', summary)
    logger.info('run done name=%s seed=%d perplexity=%.4f maxvio_global=%.4f',
                config.run_name, seed, result.perplexity, result.maxvio_global)
    return RunResult(run_dir, summary)


def execute(config, seed):
    """Process-pool entry point: run and return the summary only."""
    return run(config, seed).summary
