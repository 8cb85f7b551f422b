"""Learning-aware device scheduling for federated edge learning on streaming data."""

__version__ = "0.1.0"

from .config import ConfigError, SystemConfig, load_config, validate  # noqa: E402
from .sim import RoundLog, SchedulerKind, run, summarize  # noqa: E402

__all__ = ["ConfigError", "SystemConfig", "load_config", "validate", "RoundLog", "SchedulerKind",
           "run", "summarize", "__version__"]
