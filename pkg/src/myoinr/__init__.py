"""Latent-conditioned implicit neural representations of myocardial motion and strain."""

__version__ = "0.1.0"
