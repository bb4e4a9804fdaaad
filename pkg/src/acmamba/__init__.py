"""ACMamba - region-trained selective state space anomaly detection for hyperspectral cubes."""

__version__ = "0.1.0"
