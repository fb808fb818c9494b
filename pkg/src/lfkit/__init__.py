"""Dense light-field reconstruction from sparse, arbitrarily placed views."""

__version__ = "0.1.0"
