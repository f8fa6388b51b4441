from lab.management.base import LabCommand, int_list
from lab.probes import chunk_probe

SHUFFLE_MODES = {'off': (False,), 'on': (True,), 'both': (False, True)}


class Command(LabCommand):
    help = 'Train Expert Choice models across chunk sizes and shuffle settings'

    def add_lab_arguments(self, parser):
        parser.add_argument('--chunks', type=int_list, required=True, help='Comma-separated EC chunk sizes in tokens')
        parser.add_argument('--shuffle', choices=sorted(SHUFFLE_MODES), default='both')
        parser.add_argument('--threads', type=int)

    def run(self, config, **options):
        summary = chunk_probe(config, options['chunks'], SHUFFLE_MODES[options['shuffle']], options.get('threads'))
        for label, row in summary['final_loss'].items():
            self.stdout.write(f'{label} final_loss={row["mean"]:.4f} ±{row["std"]:.4f} (n={row["n"]})')
        for name, value in summary['tests'].items():
            self.stdout.write(f'{name}={value}')
        self.stdout.write(self.style.SUCCESS(f'✓ {config.output_root / config.run_name}'))
