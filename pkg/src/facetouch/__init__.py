"""Detection and classification of infant hand-on-face touches from
pre-extracted landmark streams and frame images."""

__version__ = "0.1.0"
