"""Autoencoder DeepONets with a shared branch for stochastic operator learning."""

__version__ = "0.1.0"
