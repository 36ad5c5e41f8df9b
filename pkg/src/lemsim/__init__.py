"""Local energy market simulator with multi-agent actor-critic prosumers and a VAE-GAN price adversary."""

__version__ = "0.1.0"
