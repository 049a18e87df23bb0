"""Ground-truth spectral efficiency for multi-user MIMO downlink and fast
learned predictors of it."""

__version__ = "0.1.0"
