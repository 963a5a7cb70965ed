"""parlance: desk-scale curriculum training for latent-variable dialogue models."""

__version__ = "0.1.0"
