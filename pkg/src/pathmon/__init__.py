"""Process-aware predictive monitoring for clinical pathways.

Raw tables are lifted into an event log, traces are cut into prefixes,
prefixes are encoded as feature vectors and classifiers are trained and
evaluated overall and by prefix length.
"""

__version__ = "0.1.0"
