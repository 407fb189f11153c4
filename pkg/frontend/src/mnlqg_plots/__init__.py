"""Figure rendering for mnlqg outputs: detection-statistic histograms with
threshold overlays, and sweep curves over the noise-variance grid."""

__version__ = "0.1.0"

from .figures import FigureSpec, render_histogram, render_sweep

__all__ = ["__version__", "FigureSpec", "render_histogram", "render_sweep"]
