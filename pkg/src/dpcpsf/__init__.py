"""Differentiable predictive control with an event-triggered safety filter.

Scalar-tape autodiff, a 17-state quadcopter model, numeric relative-degree
decomposition, policy training on the decomposed subsystem, data-driven safe
sets, a predictive safety filter, and sampled-data MPC baselines.
"""

__version__ = "0.1.0"
