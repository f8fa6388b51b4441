from lab.management.base import LabCommand, float_list
from lab.sweeps import UPDATE_RATES, sweep_update_rate


class Command(LabCommand):
    help = 'Loss-free balancing across bias update rates'

    def add_lab_arguments(self, parser):
        parser.add_argument('--rates', type=float_list, default=list(UPDATE_RATES),
                            help='Comma-separated update rates (default 1e-4,1e-3,1e-2)')
        parser.add_argument('--threads', type=int)

    def run(self, config, **options):
        result = sweep_update_rate(config, options['rates'], options.get('threads'))
        tests = result['summary']['tests']
        for label, p in tests['early_worse'].items():
            self.stdout.write(f'{label} early MaxVio above {tests["reference"]}: p={p:.4g}')
        for label, p in tests['late_worse'].items():
            self.stdout.write(f'{label} late MaxVio above {tests["reference"]}: p={p:.4g}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result["csv"]} {result["svg"]}'))
