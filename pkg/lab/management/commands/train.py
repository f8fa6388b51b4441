from lab.jobs import run_jobs
from lab.management.base import LabCommand
from lab.runner import execute


class Command(LabCommand):
    help = 'Train the configured model once per seed and write run directories'

    def add_lab_arguments(self, parser):
        parser.add_argument('--threads', type=int, help='Parallel seeds, capped by MOEBAL_THREADS')

    def run(self, config, **options):
        self.stdout.write(f'Training {config.run_name} ({config.model.strategy}) '
                          f'for {config.steps} steps, seeds {list(config.seeds)}...')
        summaries = run_jobs(execute, [(config, seed) for seed in config.seeds], options.get('threads'))
        for seed, summary in zip(config.seeds, summaries):
            self.stdout.write(self.style.SUCCESS(
                f'✓ {config.run_dir(seed)} perplexity={summary["perplexity"]:.4f} '
                f'maxvio_global={summary["maxvio_global"]:.4f}'))
