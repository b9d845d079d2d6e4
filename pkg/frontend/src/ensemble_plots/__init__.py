"""Figure rendering for ensemblectl experiment CSVs."""

__version__ = "0.1.0"

from .figures import PlotResult, PlotSpec, plot_decay, plot_scaling, plot_trajectories, render

__all__ = [
    "__version__",
    "PlotResult",
    "PlotSpec",
    "plot_decay",
    "plot_scaling",
    "plot_trajectories",
    "render",
]
