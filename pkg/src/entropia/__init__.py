"""Entropy-SGD / Entropy-SGLD training with PAC-Bayes and differential-privacy bounds."""
from . import bounds, gibbs, nn_core, optim

__version__ = "0.1.0"
__all__ = ["bounds", "gibbs", "nn_core", "optim"]
