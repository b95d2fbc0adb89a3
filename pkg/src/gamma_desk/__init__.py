"""Generative augmentation and self-attentive detection at desk scale."""

__version__ = "0.1.0"
