from moe.leakage import LeakageBoundInput, capacity_bound, exact_assignment_bits

from lab.management.base import LabCommand


class Command(LabCommand):
    help = 'Closed-form Expert Choice leakage bound, optionally with the exact count for T tokens'
    uses_config = False

    def add_lab_arguments(self, parser):
        parser.add_argument('--top-k', type=float, default=2)
        parser.add_argument('--experts', type=int, default=16)
        parser.add_argument('--layers', type=int, default=9)
        parser.add_argument('--tokens', type=int, help='Also report exact per-layer bits for T tokens')

    def run(self, **options):
        bound = capacity_bound(LeakageBoundInput(options['top_k'], options['experts'], options['layers']))
        self.stdout.write(self.style.SUCCESS(f'capacity_bound={bound:.4f} bits/token'))
        if options.get('tokens'):
            exact = exact_assignment_bits(options['tokens'], options['experts'], int(options['top_k']))
            self.stdout.write(f'exact_bits_per_layer={exact:.4f} tokens={options["tokens"]}')
