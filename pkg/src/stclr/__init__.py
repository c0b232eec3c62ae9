"""Self-supervised video representation learning on a NumPy substrate.

Contrastive pretraining with temporal-sampling and frame-consistent spatial
augmentation, a factorized spatiotemporal encoder, and a supervised
fine-tuning/evaluation protocol, all runnable at desk scale on synthetic
clips.
"""

__version__ = "0.1.0"

from . import errors, kernels, nn

__all__ = ["errors", "kernels", "nn", "__version__"]
