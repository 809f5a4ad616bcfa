"""Protected database search with leakage accounting."""
__version__ = "0.1.0"
