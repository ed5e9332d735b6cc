"""Block-autoregressive discrete-diffusion molecule generation and search."""

__version__ = "0.1.0"
