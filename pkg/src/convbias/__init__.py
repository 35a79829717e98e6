"""Sparse, locally connected networks trained from scratch in numpy.

Layers and functional kernels, the D/S architecture families with their
locally connected and fully connected embeddings, the beta-LASSO optimizer,
description-length generalization bounds, sparsity and filter analytics, and
MNIST/CIFAR loaders.
"""
from .architectures import ArchSpec, Family, build, param_count, solve_alpha
from .optim import BETA_LASSO, SGD, OptimizerConfig, OptimizerState, cosine_lr

__all__ = ["ArchSpec", "Family", "build", "param_count", "solve_alpha",
           "BETA_LASSO", "SGD", "OptimizerConfig", "OptimizerState", "cosine_lr"]
__version__ = "0.1.0"
