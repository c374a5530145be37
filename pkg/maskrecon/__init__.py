"""Multi-mask image reconstruction geometry for unsupervised depth / ego-motion."""

__version__ = "0.1.0"
