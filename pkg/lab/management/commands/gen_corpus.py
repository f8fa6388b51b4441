from lab.corpus import CORPUS_KINDS, gen_corpus, write_tokens
from lab.management.base import LabCommand


class Command(LabCommand):
    help = 'Write a token stream (one byte per token)'
    uses_config = False

    def add_lab_arguments(self, parser):
        parser.add_argument('output', help='Destination file')
        parser.add_argument('--kind', choices=CORPUS_KINDS, default='markov2')
        parser.add_argument('--size', type=int, default=200_000)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--path', help='Source file for --kind file')
        parser.add_argument('--alphabet-size', type=int, default=32)

    def run(self, **options):
        tokens = gen_corpus(options['kind'], options['size'], options['seed'], options.get('path'),
                            options['alphabet_size'])
        path = write_tokens(tokens, options['output'])
        self.stdout.write(self.style.SUCCESS(f'✓ {path} tokens={len(tokens)}'))
