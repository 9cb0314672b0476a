"""Dual variational autoencoder with attention fusion for paired structural
and functional brain connectomes."""

__version__ = "0.1.0"
