"""
Error hierarchy shared by the substrate and the harness.
"""


class MoebalError(Exception):
    """Base class for every error the lab raises on purpose."""

    kind = 'moebal-error'


class DimensionError(MoebalError):
    """Shape, axis or index mismatch."""

    kind = 'dimension-error'


class ContractError(MoebalError):
    """A documented precondition was violated."""

    kind = 'contract-error'


class NonFiniteError(ContractError):
    """NaN or Inf reached a tensor or a loss."""

    kind = 'non-finite'


class ConfigError(MoebalError):
    kind = 'config-error'


class CheckpointError(MoebalError):
    kind = 'checkpoint-error'


def one_line_reason(exc):
    """Render an error as `error=<kind> reason=<text>` on a single line."""
    kind = getattr(exc, 'kind', 'error')
    text = ' '.join(str(exc).split())
    return f'error={kind} reason={text}'
