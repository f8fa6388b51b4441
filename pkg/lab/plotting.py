"""
SVG line charts drawn from CSV files. Plots read only CSV output, never
model state.
"""

import logging
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from moe.exceptions import MoebalError  # noqa: E402

logger = logging.getLogger(__name__)

# Text stays text and ids stay stable, so a chart can be parsed back and
# two renders of the same CSV are identical.
SVG_RC = {'svg.fonttype': 'none', 'svg.hashsalt': 'moebal'}


def read_csv(path):
    try:
        return pd.read_csv(path, comment='#')
    except (OSError, ValueError) as exc:
        raise MoebalError(f'cannot read csv {path}: {exc}') from exc


def collect_series(csv_paths, x=None, y=None):
    """(label, x values, y values) per plotted column, plus the axis names."""
    csv_paths = [Path(p) for p in csv_paths]
    series = []
    x_names, y_names = [], []
    for path in csv_paths:
        frame = read_csv(path)
        if frame.columns.empty:
            raise MoebalError(f'csv {path} has no columns')
        x_col = x or frame.columns[0]
        y_cols = [y] if y else [c for c in frame.columns if c != x_col]
        for col in [x_col, *y_cols]:
            if col not in frame.columns:
                raise MoebalError(f'column {col!r} not in {path}')
        x_names.append(x_col)
        for col in y_cols:
            data = frame[[x_col, col]].apply(pd.to_numeric, errors='coerce').dropna()
            label = col if len(csv_paths) == 1 else (path.stem if y else f'{path.stem}:{col}')
            series.append((label, data[x_col].to_numpy(np.float64), data[col].to_numpy(np.float64)))
            y_names.append(col)
    x_label = ', '.join(dict.fromkeys(x_names))
    y_label = ', '.join(dict.fromkeys(y_names))
    return series, x_label, y_label


def draw_chart(series, x_label, y_label, title=''):
    """A figure with one line per series; line i carries the svg id `series-i`."""
    if not any(xs.size for _, xs, _ in series):
        raise MoebalError('nothing to plot: every series is empty')
    fig, ax = plt.subplots(figsize=(9, 5))
    for index, (label, xs, ys) in enumerate(series):
        (line,) = ax.plot(xs, ys, label=label)
        line.set_gid(f'series-{index}')
    ax.set_xlabel(x_label, gid='x-label')
    ax.set_ylabel(y_label, gid='y-label')
    if title:
        ax.set_title(title, gid='title')
    ax.grid(True, alpha=0.3)
    ax.legend(loc='center left', bbox_to_anchor=(1, 0.5))
    return fig


def plot(csv_paths, out_path, x=None, y=None, title=''):
    """One SVG with a line per plotted series."""
    series, x_label, y_label = collect_series(csv_paths, x, y)
    out_path = Path(out_path)
    with plt.rc_context(SVG_RC):
        fig = draw_chart(series, x_label, y_label, title)
        try:
            out_path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out_path, format='svg', bbox_inches='tight', metadata={'Date': None})
        except OSError as exc:
            raise MoebalError(f'cannot write plot {out_path}: {exc}') from exc
        finally:
            plt.close(fig)
    logger.info('plot written path=%s series=%d', out_path, len(series))
    return out_path
