"""Dynamic latent-region segmentation of gridded cities from OD trip records."""

__version__ = "0.1.0"
