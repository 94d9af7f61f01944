"""Surface-conditioned GAN inpainting and full-body anonymization toolkit."""

__version__ = "0.1.0"
