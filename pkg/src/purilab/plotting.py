"""
purilab - diagnostic figures.

Member/non-member histograms and the security-utility trade-off panels.
"""

from __future__ import annotations

__all__ = ["plot_membership_histograms", "plot_tradeoff", "save_figure", "TRADEOFF_PANELS"]

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any
from warnings import warn

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.axes import Axes
from numpy.typing import ArrayLike

from .backend.error_handling import EmptyDataError
from .backend.utilities import HistogramConfig, SeriesConfig

logger = logging.getLogger(__name__)

# (x key, y key, x label, y label); x is the utility axis, y the security axis
TRADEOFF_PANELS = (
    ("test_accuracy", "inversion_error", "test accuracy", "inversion error"),
    ("confidence_distortion", "inversion_error", "confidence distortion", "inversion error"),
    ("test_accuracy", "nsh_accuracy", "test accuracy", "NSH inference accuracy"),
    ("confidence_distortion", "nsh_accuracy", "confidence distortion", "NSH inference accuracy"),
)


def plot_membership_histograms(
    member_values: ArrayLike,
    nonmember_values: ArrayLike,
    x_label: str | None = None,
    plot_title: str | None = None,
    hist_config: HistogramConfig | None = None,
    figure_kwargs: dict | None = None,
    axis: Axes | None = None,
) -> Axes:
    """
    Overlay the normalized member and non-member histograms of a per-sample quantity.

    The bins span ``[0, 1]`` with the same edges :func:`purilab.evaluation.histogram_gap` uses, so
    the visible gap between the bars is the reported one.

    Parameters
    ----------
    member_values :
        Values on training-set members, e.g. correct-class confidence.
    nonmember_values :
        The same quantity on non-members.
    x_label :
        The label for the x-axis.
    plot_title :
        The title for the plot.
    hist_config :
        Bin count and styling. If None, a default ``HistogramConfig`` is used.
    figure_kwargs :
        Keyword arguments for creating the figure and axis when `axis` is not provided. Ignored if `axis` is provided.
    axis :
        The axis object to draw on. If not passed, a new axis object will be created internally.

    Returns
    -------
    Axes
        The axis holding both histograms.

    Raises
    ------
    EmptyDataError
        If either side has no values.
    """
    members = np.asarray(member_values, dtype=np.float64).ravel()
    nonmembers = np.asarray(nonmember_values, dtype=np.float64).ravel()
    if members.size == 0 or nonmembers.size == 0:
        raise EmptyDataError("membership histograms need values on both sides")

    config = hist_config or HistogramConfig()
    if axis is not None:
        if figure_kwargs:
            warn("`figure_kwargs` is ignored when `axis` is provided.", UserWarning, stacklevel=2)
    else:
        _, axis = plt.subplots(**(figure_kwargs or {}))

    edges = np.linspace(0.0, 1.0, config.bins + 1)
    common = config.hist_kwargs()
    # bar heights are per-side fractions
    axis.hist(
        members,
        bins=edges,
        weights=np.full(members.size, 1.0 / members.size),
        color=config.member_color,
        label="members",
        **common,
    )
    axis.hist(
        nonmembers,
        bins=edges,
        weights=np.full(nonmembers.size, 1.0 / nonmembers.size),
        color=config.nonmember_color,
        label="non-members",
        **common,
    )
    axis.set_xlim(0.0, 1.0)
    axis.set_xlabel(x_label)
    axis.set_ylabel("fraction of samples")
    axis.set_title(plot_title)
    axis.legend(loc="best")

    return axis


def plot_tradeoff(
    rows: Sequence[Mapping[str, Any]],
    plot_title: str | None = None,
    series_config: SeriesConfig | None = None,
    figure_kwargs: dict | None = None,
) -> tuple[plt.Figure, np.ndarray]:
    """
    Draw the 2x2 security-utility panels, one series per defense family.

    Parameters
    ----------
    rows :
        Sweep points, each with a ``family`` plus the keys named in :data:`TRADEOFF_PANELS`.
        Points missing a panel's value are left out of that panel.
    plot_title :
        Title of the figure.
    series_config :
        Styling; sequence-valued fields cycle over families. If None, a default ``SeriesConfig`` is used.
    figure_kwargs :
        Keyword arguments for creating the figure and axes. Passed directly to ``plt.subplots``.

    Returns
    -------
    tuple[Figure, numpy.ndarray]
        The figure and the flattened array of its four axes.

    Raises
    ------
    EmptyDataError
        If ``rows`` is empty.
    """
    if not rows:
        raise EmptyDataError("no trade-off points to plot")

    sp_dict = dict(figure_kwargs) if figure_kwargs else {}
    sp_dict.pop("nrows", None)
    sp_dict.pop("ncols", None)
    sp_dict.setdefault("figsize", (10, 8))
    config = series_config or SeriesConfig()

    fig, axs = plt.subplots(2, 2, **sp_dict, squeeze=False)
    axs = axs.flatten()

    families = list(dict.fromkeys(row["family"] for row in rows))
    for ax, (x_key, y_key, x_label, y_label) in zip(axs, TRADEOFF_PANELS):
        for index, family in enumerate(families):
            points = sorted(
                (row[x_key], row[y_key])
                for row in rows
                if row["family"] == family and row.get(x_key) is not None and row.get(y_key) is not None
            )
            if not points:
                continue
            xs, ys = zip(*points)
            ax.plot(xs, ys, label=family, **config.for_series(index))
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="best")

    fig.suptitle(plot_title)
    fig.tight_layout()

    return fig, axs


def save_figure(fig: plt.Figure, path: str | Path) -> Path:
    """Write ``fig`` to ``path`` and close it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    logger.debug("wrote figure %s", path)
    return path
