"""latentsr: desk-scale latent-diffusion super-resolution with a PPO agent
steering the reverse sampler.

Hot numerical kernels live in a compiled extension with a pure-numpy fallback;
see latentsr.backend for which one is active.
"""

from .backend import backend_name, extension_available

__version__ = "0.1.0"

__all__ = ["backend_name", "extension_available", "__version__"]
