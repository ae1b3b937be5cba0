"""CSI fingerprinting via time-domain sample generation and auxiliary IQ training."""

__version__ = "0.1.0"
