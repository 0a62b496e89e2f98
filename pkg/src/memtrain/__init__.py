"""Mixed-precision training of neural networks on simulated RRAM crossbars."""

__version__ = "0.1.0"
