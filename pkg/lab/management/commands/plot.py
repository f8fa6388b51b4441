from lab.management.base import LabCommand
from lab.plotting import plot


class Command(LabCommand):
    help = 'Draw CSV columns as SVG line charts'
    uses_config = False

    def add_lab_arguments(self, parser):
        parser.add_argument('csv', nargs='+')
        parser.add_argument('--output', required=True)
        parser.add_argument('-x', help='X column (default: first column)')
        parser.add_argument('-y', help='Y column (default: every other column)')
        parser.add_argument('--title', default='')

    def run(self, **options):
        path = plot(options['csv'], options['output'], options.get('x'), options.get('y'), options['title'])
        self.stdout.write(self.style.SUCCESS(f'✓ {path}'))
