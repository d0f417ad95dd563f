"""Robust nonlinear ICA via gamma-cross-entropy contrastive learning.

Implements the four contrastive estimators (TCL, RTCL, PCL, RPCL) on top of
a small self-contained numerics stack, plus synthetic contaminated data
generation, robust whitening, FastICA postprocessing, evaluation metrics,
discrete-grid theory oracles, and an HSIC-based causal-direction pipeline.
"""

__version__ = "0.1.0"
