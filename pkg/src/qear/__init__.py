"""Unsupervised acoustic modelling of machinery recordings with a beta-VAE
over MCLT magnitude/phase planes."""

__version__ = "0.1.0"
