"""Toolkit for brain-MRI inpainting challenges: healthy-mask synthesis,
voiding, a harmonic baseline, masked metrics and rank-sum leaderboards."""

__version__ = "0.1.0"
