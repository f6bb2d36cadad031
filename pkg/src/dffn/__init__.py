"""Two-stage dual-domain (spatial + Fourier) low-light image enhancement.

A small numpy autodiff engine, the network and its ablation variants,
paired-data synthesis, losses, metrics and a training command line.
"""
from dffn.network import DFFN, DffnConfig, ForwardResult, full_forward, init_params
from dffn.tensor import Param, Tensor, no_grad, precision

__version__ = "0.1.0"

__all__ = ["DFFN", "DffnConfig", "ForwardResult", "Param", "Tensor", "full_forward",
           "init_params", "no_grad", "precision"]
