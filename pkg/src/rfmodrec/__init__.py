"""RF modulation classification from raw I/Q: synthesis, front-ends, CNNs and evaluation."""

__version__ = "0.1.0"
