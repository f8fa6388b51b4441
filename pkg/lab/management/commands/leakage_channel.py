from django.core.management.base import CommandError

from moe.leakage import channel_transmit
from moe.routing import ExpertChoiceConfig

from lab.management.base import LabCommand


class Command(LabCommand):
    help = 'Send a bit string to an earlier token through Expert Choice assignments'
    uses_config = False

    def add_lab_arguments(self, parser):
        parser.add_argument('--bits', default='', help='Message as a 0/1 string')
        parser.add_argument('--experts', type=int, default=16)
        parser.add_argument('--top-k', type=int, default=2)
        parser.add_argument('--tokens', type=int, default=64)
        parser.add_argument('--chunk-size', type=int)
        parser.add_argument('--shuffle', action='store_true')
        parser.add_argument('--shuffle-seed', type=int, default=0)

    def run(self, **options):
        if set(options['bits']) - {'0', '1'}:
            raise CommandError('error=contract-error reason=--bits must be a 0/1 string')
        bits = [int(b) for b in options['bits']]
        ec = ExpertChoiceConfig(options.get('chunk_size'), options['shuffle'], options['shuffle_seed'])
        message = channel_transmit(bits, ec, options['experts'], options['top_k'], options['tokens'])
        decoded = ''.join(str(b) for b in message.decoded)
        if message.errors:
            raise CommandError(f'error=channel-error reason=decoded {decoded} with {message.errors} bit errors')
        self.stdout.write(self.style.SUCCESS(f'✓ sent={options["bits"]} decoded={decoded} errors=0'))
