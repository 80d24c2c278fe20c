"""Figure rendering for the simulation CSV outputs."""

from plots.render import (
    MissingColumns,
    PlotSpec,
    load_spec,
    plot_metrics,
    plot_trajectories,
)

__all__ = [
    "MissingColumns",
    "PlotSpec",
    "load_spec",
    "plot_metrics",
    "plot_trajectories",
]
