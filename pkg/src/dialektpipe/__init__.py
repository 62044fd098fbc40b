"""Swiss German dialect speech corpus construction and voice-adaptation evaluation."""

from .errors import BackendError, ConfigError, DataError, DialektError
from .model import DialectRegion, Episode, Manifest, MetricReport, MetricRow, Segment, SpeakerTurn

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ConfigError",
    "DataError",
    "DialectRegion",
    "DialektError",
    "Episode",
    "Manifest",
    "MetricReport",
    "MetricRow",
    "Segment",
    "SpeakerTurn",
]
