"""Desk-scale video GAN: dual spatial/temporal discriminators, a ConvGRU
generator, a frame-prediction variant, and an FID/IS evaluation harness."""

__version__ = "0.1.0"
