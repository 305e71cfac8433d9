"""Energy-based GAN anomaly scoring for NSL-KDD network traffic records."""

__version__ = "0.1.0"
