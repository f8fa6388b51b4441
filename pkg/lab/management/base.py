"""
Shared plumbing for the lab's management commands: the common experiment
flags, config loading and the one-line error contract.
"""

import argparse

from django.core.management.base import BaseCommand, CommandError

from moe.exceptions import MoebalError, one_line_reason

from ..config import load_config
from ..forms import FORM_ALIASES, RULE_ALIASES, STRATEGY_ALIASES


def _parse_list(cast):
    def parse(text):
        try:
            values = [cast(part) for part in text.split(',') if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f'expected a comma-separated list, got {text!r}')
        if not values:
            raise argparse.ArgumentTypeError('list is empty')
        return values
    return parse


int_list = _parse_list(int)
float_list = _parse_list(float)
str_list = _parse_list(str.strip)


class LabCommand(BaseCommand):
    """
    Base for commands that act on an experiment config. Subclasses implement
    `run(config, **options)`; commands without a config set
    `uses_config = False` and implement `run(**options)`.
    """

    uses_config = True

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument('--config', dest='config_path', help='Flat key = value experiment config file')
            parser.add_argument('--seed', type=int, help='Run a single seed instead of the config seed list')
            parser.add_argument('--seeds', help='Comma-separated seed list')
            parser.add_argument('--out', help='Output directory')
            parser.add_argument('--strategy', choices=sorted(STRATEGY_ALIASES))
            parser.add_argument('--update-rule', choices=sorted(RULE_ALIASES))
            parser.add_argument('--bias-form', choices=sorted(FORM_ALIASES))
            parser.add_argument('--gate', choices=['sigmoid', 'softmax'])
        self.add_lab_arguments(parser)

    def add_lab_arguments(self, parser):
        pass

    def load(self, options):
        seeds = options.get('seeds')
        if options.get('seed') is not None:
            seeds = str(options['seed'])
        overrides = {
            'seeds': seeds,
            'out': options.get('out'),
            'strategy': options.get('strategy'),
            'update_rule': options.get('update_rule'),
            'bias_form': options.get('bias_form'),
            'gate': options.get('gate'),
        }
        return load_config(options.get('config_path'), overrides)

    def handle(self, *args, **options):
        try:
            if self.uses_config:
                return self.run(self.load(options), **options)
            return self.run(**options)
        except MoebalError as exc:
            raise CommandError(one_line_reason(exc))

    def run(self, *args, **options):
        raise NotImplementedError
