from django import forms

from moe.model import PRESETS

STRATEGY_ALIASES = {'vanilla': 'vanilla', 'aux': 'aux', 'loss-free': 'loss_free', 'loss_free': 'loss_free',
                    'ec': 'ec'}
RULE_ALIASES = {'sign': 'sign', 'prop': 'proportional', 'proportional': 'proportional'}
FORM_ALIASES = {'add': 'additive', 'additive': 'additive', 'mul': 'multiplicative',
                'multiplicative': 'multiplicative'}


def _choices(aliases):
    return [(key, key) for key in aliases]


class ExperimentConfigForm(forms.Form):
    """
    Validates a flat key/value experiment config. Every documented key is a
    field; absent keys fall back to the preset and dataclass defaults.
    """

    # Run layout
    run_name = forms.SlugField(required=False, max_length=80)
    steps = forms.IntegerField(required=False, min_value=0)
    batch_size = forms.IntegerField(required=False, min_value=1)
    micro_batch_size = forms.IntegerField(required=False, min_value=1)
    ep_parallel = forms.IntegerField(required=False, min_value=1)
    out = forms.CharField(required=False)
    seeds = forms.CharField(required=False, help_text='Comma-separated integer seeds')
    eval_every = forms.IntegerField(required=False, min_value=1)
    bias_history = forms.BooleanField(required=False)

    # Corpus
    corpus = forms.ChoiceField(required=False, choices=[('markov2', 'markov2'), ('file', 'file')])
    corpus_path = forms.CharField(required=False)
    corpus_size = forms.IntegerField(required=False, min_value=2)
    corpus_seed = forms.IntegerField(required=False, min_value=0)
    alphabet_size = forms.IntegerField(required=False, min_value=2, max_value=256)
    val_tokens = forms.IntegerField(required=False, min_value=2)

    # Optimizer
    lr = forms.FloatField(required=False, min_value=0.0)
    warmup_steps = forms.IntegerField(required=False, min_value=0)

    # Model
    preset = forms.ChoiceField(required=False, choices=[(name, name) for name in PRESETS])
    vocab_size = forms.IntegerField(required=False, min_value=1)
    d_model = forms.IntegerField(required=False, min_value=1)
    n_layers = forms.IntegerField(required=False, min_value=1)
    n_heads = forms.IntegerField(required=False, min_value=1)
    seq_len = forms.IntegerField(required=False, min_value=1)
    d_ff = forms.IntegerField(required=False, min_value=1)
    n_routed = forms.IntegerField(required=False, min_value=1)
    top_k = forms.IntegerField(required=False, min_value=1)
    n_shared = forms.IntegerField(required=False, min_value=0)
    d_expert = forms.IntegerField(required=False, min_value=1)
    gate = forms.ChoiceField(required=False, choices=[('sigmoid', 'sigmoid'), ('softmax', 'softmax')])
    strategy = forms.ChoiceField(required=False, choices=_choices(STRATEGY_ALIASES))
    alpha = forms.FloatField(required=False, min_value=0.0)
    aux_scope = forms.ChoiceField(required=False, choices=[('sequence', 'sequence'), ('batch', 'batch')])
    update_rule = forms.ChoiceField(required=False, choices=_choices(RULE_ALIASES))
    bias_form = forms.ChoiceField(required=False, choices=_choices(FORM_ALIASES))
    update_rate = forms.FloatField(required=False, min_value=0.0)
    ec_chunk_size = forms.IntegerField(required=False, min_value=1)
    ec_shuffle = forms.BooleanField(required=False)
    normalize_topk = forms.BooleanField(required=False)
    init_std = forms.FloatField(required=False, min_value=0.0)

    def clean_seeds(self):
        raw = self.cleaned_data['seeds']
        if not raw:
            return None
        try:
            seeds = tuple(int(part) for part in raw.split(',') if part.strip())
        except ValueError:
            raise forms.ValidationError("Seeds must be comma-separated integers.")
        if not seeds:
            raise forms.ValidationError("Provide at least one seed.")
        return seeds

    def clean_strategy(self):
        value = self.cleaned_data['strategy']
        return STRATEGY_ALIASES[value] if value else value

    def clean_update_rule(self):
        value = self.cleaned_data['update_rule']
        return RULE_ALIASES[value] if value else value

    def clean_bias_form(self):
        value = self.cleaned_data['bias_form']
        return FORM_ALIASES[value] if value else value

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('corpus') == 'file' and not cleaned.get('corpus_path'):
            raise forms.ValidationError("corpus=file needs corpus_path.")
        return cleaned

    def error_line(self):
        """All validation errors flattened onto one line."""
        parts = []
        for field, errors in self.errors.items():
            label = 'config' if field == '__all__' else field
            parts.append(f"{label}: {' '.join(errors)}")
        return '; '.join(parts)
