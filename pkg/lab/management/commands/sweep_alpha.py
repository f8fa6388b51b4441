from lab.management.base import LabCommand, float_list
from lab.sweeps import ALPHAS, sweep_alpha


class Command(LabCommand):
    help = 'Auxiliary-loss balancing across loss coefficients'

    def add_lab_arguments(self, parser):
        parser.add_argument('--alphas', type=float_list, default=list(ALPHAS),
                            help='Comma-separated alpha values (default 0,1e-4,1e-3,1e-2)')
        parser.add_argument('--threads', type=int)

    def run(self, config, **options):
        result = sweep_alpha(config, options['alphas'], options.get('threads'))
        summary = result['summary']
        for label, row in summary['members'].items():
            self.stdout.write(f'{label} perplexity={row["perplexity"]:.4f} maxvio_global={row["maxvio_global"]:.4f}')
        self.stdout.write(f'maxvio_global non-increasing in alpha: {summary["tests"]["maxvio_global_non_increasing"]}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result["csv"]} {result["svg"]}'))
