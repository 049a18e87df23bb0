import numpy as np


def mape(predictions, targets) -> float:
    """Mean absolute percentage error, as a fraction (0.05 == 5 %)."""
    a = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if a.shape != y.shape or a.size == 0:
        raise ValueError("predictions and targets must have the same nonzero length")
    if np.any(y == 0):
        raise ValueError("MAPE is undefined for zero targets")
    return float(np.mean(np.abs((y - a) / y)))


def mae(predictions, targets) -> float:
    return float(np.mean(np.abs(np.asarray(targets, float) - np.asarray(predictions, float))))
