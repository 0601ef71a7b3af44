"""Tourism indicators, event scorecards and O-D road congestion from anonymized CDRs."""

__version__ = "0.1.0"

from .indicators import TimeWindow  # noqa: F401
from .ingest import CdrRecord, ReferenceBundle, load_reference, parse_cdr_stream  # noqa: F401
from .mobility import Visit, classify_subscribers, extract_visits  # noqa: F401
from .util import DataError  # noqa: F401
