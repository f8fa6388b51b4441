from lab.forms import FORM_ALIASES, RULE_ALIASES
from lab.management.base import LabCommand, float_list, str_list
from lab.sweeps import sweep_bias_variants


class Command(LabCommand):
    help = 'Loss-free balancing across bias update rules and bias forms'

    def add_lab_arguments(self, parser):
        parser.add_argument('--rates', type=float_list, default=[1e-3])
        parser.add_argument('--rules', type=str_list, default=['sign', 'proportional'])
        parser.add_argument('--forms', type=str_list, default=['additive', 'multiplicative'])
        parser.add_argument('--threads', type=int)

    def run(self, config, **options):
        rules = [RULE_ALIASES.get(rule, rule) for rule in options['rules']]
        forms = [FORM_ALIASES.get(form, form) for form in options['forms']]
        result = sweep_bias_variants(config, options['rates'], rules, forms, options.get('threads'))
        for label, row in result['summary']['members'].items():
            self.stdout.write(f'{label} perplexity={row["perplexity"]:.4f} maxvio_global={row["maxvio_global"]:.4f}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result["csv"]} {result["svg"]}'))
