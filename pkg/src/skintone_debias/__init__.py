"""Skin tone labelling from lesion images and bias unlearning on small networks."""

__version__ = "0.1.0"
