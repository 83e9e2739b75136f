"""Learning-not-to-reconstruct video anomaly detection with pseudo anomalies."""

__version__ = "0.1.0"
