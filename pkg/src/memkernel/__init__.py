"""Transfer-tensor (discrete memory kernel) engine for multi-time correlations
of non-Markovian open quantum systems."""

__version__ = "0.1.0"
