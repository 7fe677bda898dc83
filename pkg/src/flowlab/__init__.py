"""Simulate 2D chaotic and turbulent flows, turn them into image datasets,
train a staged CNN to tell the regimes apart and measure the effective
dimension of its stage representations."""

__version__ = "0.1.0"
