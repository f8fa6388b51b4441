from moe import checkpoint
from moe.exceptions import ContractError
from moe.model import model_router
from moe.routing import dump_assignment_csv
from moe.training import evaluate, validation_windows

from lab.corpus import corpus_for, split_corpus
from lab.management.base import LabCommand
from lab.records import write_json


class Command(LabCommand):
    help = 'Validation perplexity and MaxVio_global of a checkpoint'

    def add_lab_arguments(self, parser):
        parser.add_argument('checkpoint', help='Path to checkpoint.bin')
        parser.add_argument('--json', dest='json_path', help='Also write the result as JSON')
        parser.add_argument('--dump-routing', dest='routing_path',
                            help='Write the routing of the first validation window as CSV')
        parser.add_argument('--layer', type=int, help='MoE layer for --dump-routing (default: first MoE layer)')

    def run(self, config, **options):
        model = checkpoint.load(options['checkpoint'])
        _, val_tokens = split_corpus(corpus_for(config), config.val_tokens)
        result = evaluate(model, val_tokens)
        payload = {
            'checkpoint': str(options['checkpoint']),
            'perplexity': result.perplexity,
            'maxvio_global': result.maxvio_global,
            'layer_maxvio_global': list(result.layer_maxvio),
            'tokens': result.tokens,
        }
        if options.get('json_path'):
            write_json(options['json_path'], payload)
        self.stdout.write(self.style.SUCCESS(
            f'perplexity={result.perplexity:.4f} maxvio_global={result.maxvio_global:.4f} tokens={result.tokens}'))
        if options.get('routing_path'):
            self.dump_routing(model, val_tokens, options['routing_path'], options.get('layer'))

    def dump_routing(self, model, val_tokens, path, layer):
        if layer is None:
            if not model.config.moe_layers:
                raise ContractError('model has no MoE layer to dump')
            layer = model.config.moe_layers[0]
        window = validation_windows(val_tokens, model.config.seq_len)[0][:model.config.seq_len]
        assignment = model_router(model, layer)(window)
        dump_assignment_csv(assignment, path)
        self.stdout.write(f'routing layer={layer} tokens={assignment.n_tokens} written to {path}')
