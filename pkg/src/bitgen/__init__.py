"""Two-stage image generation over binary latent tokens.

Stage I is a convolutional autoencoder whose latents are quantized either by
a learned-codebook vector quantizer or by an embedding-free sign quantizer
producing K-bit {-1,+1} tokens. Stage II is a masked transformer over those
bit tokens that predicts masked groups of consecutive bits and decodes
non-autoregressively with classifier-free guidance.
"""

__version__ = "0.1.0"

from . import bitops

__all__ = ["bitops", "__version__"]
