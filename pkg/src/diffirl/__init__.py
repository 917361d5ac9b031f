"""Learning diffusion sampling policies by occupancy-measure f-divergence minimization."""

__version__ = "0.1.0"
