"""Cross-embodiment surgical robot data pipeline and evaluation harness."""

__version__ = "0.1.0"

UNIFIED_ACTION_DIM = 44
