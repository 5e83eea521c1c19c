"""bintok: a desk-scale binary image tokenizer and text-image generation kit.

Everything runs on CPU with deterministic seeding: a bitmap-font text
renderer produces the corpus, a small convolutional codec with a sign-based
binary quantizer turns images into token grids, a masked-prediction
transformer maps prompts to token grids, and an evaluation kit scores
reconstructions and generations.
"""

__version__ = "0.1.0"

from .tensor import Tensor, grad_check  # noqa: F401
