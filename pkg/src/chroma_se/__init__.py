"""Speech enhancement through colormapped log-power spectrograms."""

__version__ = "0.1.0"
