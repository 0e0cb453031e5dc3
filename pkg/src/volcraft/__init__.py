"""Volatility-surface VAE toolkit.

Train variational autoencoders on implied-vol surfaces, complete partially
observed surfaces by latent calibration, generate arbitrage-screened
synthetic surfaces, and benchmark against a Heston baseline. The compute
kernels run compiled when the extension is available; ``active_backend()``
reports which implementation is live.
"""

from volcraft._backends import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
