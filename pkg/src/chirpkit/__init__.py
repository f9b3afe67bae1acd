"""chirpkit: desk-scale bird-sound transfer-learning pipeline."""

__version__ = "0.1.0"
