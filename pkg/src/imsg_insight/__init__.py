"""Topic, reluctance, responsiveness and sentiment analytics for iMessage stores."""

__version__ = "0.1.0"

from .pipeline import RunConfig, build_report, run_analysis
from .store import load

__all__ = ["RunConfig", "build_report", "load", "run_analysis", "__version__"]
