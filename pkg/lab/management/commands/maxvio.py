from moe import checkpoint

from lab.corpus import corpus_for, split_corpus
from lab.management.base import LabCommand, int_list, str_list
from lab.sweeps import WINDOWS, computation_batch_profile, sweep_computation_batch


class Command(LabCommand):
    help = ('MaxVio_computation_batch across window sizes, for given checkpoints '
            'or for freshly trained strategies')

    def add_lab_arguments(self, parser):
        parser.add_argument('--checkpoint', nargs='+', help='Profile these checkpoints instead of training')
        parser.add_argument('--windows', type=int_list, default=list(WINDOWS),
                            help='Computation-batch sizes in samples')
        parser.add_argument('--strategies', type=str_list, default=['loss_free', 'aux'])
        parser.add_argument('--threads', type=int)

    def run(self, config, **options):
        windows = options['windows']
        if options.get('checkpoint'):
            _, val_tokens = split_corpus(corpus_for(config), config.val_tokens)
            for path in options['checkpoint']:
                profile = computation_batch_profile(checkpoint.load(path), val_tokens, windows)
                cells = ' '.join(f'w{w}={v["mean"]:.4f}' + ('' if v['tail'] is None else f' tail{w}={v["tail"]:.4f}')
                                 for w, v in profile.items())
                self.stdout.write(self.style.SUCCESS(f'{path} {cells}'))
            return
        result = sweep_computation_batch(config, windows, options['strategies'], options.get('threads'))
        for label, test in result['summary']['tests']['spearman'].items():
            self.stdout.write(f'{label} spearman rho={test["rho"]:.4f} p={test["p_value"]:.4g}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result["csv"]} {result["svg"]}'))
