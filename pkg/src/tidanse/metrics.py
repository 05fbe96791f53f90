"""Figures of merit: filter and signal mean squared errors."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

STABLE, UNSTABLE = 'stable', 'unstable'


@dataclass
class RunTraceRow:
    i: int
    u: int
    mse_w: np.ndarray
    mse_d: np.ndarray
    g_norm: np.ndarray
    gamma: float
    scenario_changed: bool = False
    stability: str = STABLE
    mse_d_central: float = float('nan')
    extra: dict = field(default_factory=dict)


def mse_w(w_net, w_central):
    """``||W_net - W_central||_F^2 / (M J)``."""
    w_net, w_central = np.asarray(w_net), np.asarray(w_central)
    if w_net.shape != w_central.shape:
        raise ShapeMismatch(f'{w_net.shape} vs {w_central.shape}')
    return float(np.mean(np.abs(w_net - w_central) ** 2))


def mse_d(d_hat, d_true):
    """Mean squared error per entry over the ``J x N`` evaluation window."""
    d_hat, d_true = np.asarray(d_hat), np.asarray(d_true)
    if d_hat.shape != d_true.shape:
        raise ShapeMismatch(f'{d_hat.shape} vs {d_true.shape}')
    return float(np.mean(np.abs(d_hat - d_true) ** 2))
