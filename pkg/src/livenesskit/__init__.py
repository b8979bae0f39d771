"""Face presentation-attack-detection toolkit: models, preprocessing, training and PAD metrics."""

__version__ = "0.1.0"
