"""Risk-certified control barrier function filtering under Gaussian uncertainty."""

__version__ = "0.1.0"
