"""Spatial covariance matrix (SCM) estimation policies."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, ShapeMismatch
from .numerics import hermitianize

log = logging.getLogger(__name__)

# Relative loading levels tried, in order, when r_nn fails to factor.
LOADING_SCHEDULE = (1e-10, 1e-6)


@dataclass
class ScmPair:
    """Mixture and noise SCMs of one observation vector."""
    r_yy: np.ndarray
    r_nn: np.ndarray
    frames_absorbed_yy: int = 0
    frames_absorbed_nn: int = 0

    def __post_init__(self):
        if self.r_yy.shape != self.r_nn.shape:
            raise ShapeMismatch('r_yy and r_nn must have the same shape')

    @property
    def dim(self):
        return self.r_yy.shape[0]

    def copy(self):
        return ScmPair(self.r_yy.copy(), self.r_nn.copy(),
                       self.frames_absorbed_yy, self.frames_absorbed_nn)


def batch_scm(samples):
    """Sample mean ``(1/N) sum_t x[t] x[t]^H`` of a ``D x N`` block."""
    x = np.asarray(samples, dtype=complex)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    n = x.shape[1]
    if n == 0:
        return np.zeros((x.shape[0], x.shape[0]), dtype=complex)
    return hermitianize(x @ x.conj().T / n)


def _check_frame(prev, x):
    x = np.asarray(x, dtype=complex)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    if prev.shape != (x.shape[0], x.shape[0]):
        raise ShapeMismatch(f'SCM {prev.shape} vs frame with {x.shape[0]} rows')
    return x


def _per_sample(r, x, beta):
    for t in range(x.shape[1]):
        xt = x[:, t:t + 1]
        r = beta * r + (1 - beta) * (xt @ xt.conj().T)
    return r


def ewma_update(prev, x, beta, per_sample=False):
    """Exponential-forgetting SCM update with one frame of data.

    By default the frame counts as one time step:
    ``R <- beta R + (1 - beta) X X^H / B``. With ``per_sample=True`` the
    recursion ``R <- beta R + (1 - beta) x[t] x[t]^H`` is applied to every
    column of the frame in time order instead. Both agree when ``B == 1``.
    """
    if not 0 < beta < 1:
        raise ValueError(f'beta must lie in (0, 1), got {beta}')
    prev = np.asarray(prev, dtype=complex)
    x = _check_frame(prev, x)
    if per_sample:
        return hermitianize(_per_sample(prev, x, beta))
    return hermitianize(beta * prev + (1 - beta) * (x @ x.conj().T) / x.shape[1])


def _diag_of(n_k, dim):
    n_k = np.asarray(n_k, dtype=complex)
    if n_k.shape != (dim, dim):
        raise ShapeMismatch(f'normalization matrix {n_k.shape} vs SCM dim {dim}')
    d = np.diag(n_k)
    if np.any(n_k - np.diag(d)):
        raise ValueError('normalization matrix must be diagonal')
    return d


def normalization_matrix(m_k, j, gamma):
    """``blkdiag(I_{M_k}, gamma I_J)``."""
    return np.diag(np.concatenate([np.ones(m_k), np.full(j, gamma)])).astype(complex)


def normalized_ewma_update(prev, x_norm, beta, n_k, per_sample=False):
    """SCM update that carries the previous estimate into the new scaling.

    ``R <- beta N R N^H + (1 - beta) xbar xbar^H``: the old estimate is
    re-expressed in the current normalization before new data is absorbed.
    ``N`` acts once per call (one frame); with ``N = I`` the result is
    bit-identical to `ewma_update`.
    """
    if not 0 < beta < 1:
        raise ValueError(f'beta must lie in (0, 1), got {beta}')
    prev = np.asarray(prev, dtype=complex)
    x = _check_frame(prev, x_norm)
    d = _diag_of(n_k, prev.shape[0])
    carried = d[:, np.newaxis] * prev * d.conj()[np.newaxis, :]
    return ewma_update(carried, x, beta, per_sample=per_sample)


def source_variance(sample_range):
    """``E|x|^2`` of a complex sample with independent uniform real/imag parts."""
    lo, hi = sample_range
    return 2.0 * (hi - lo) ** 2 / 12.0


def analytic_scm(scenario):
    """Exact mixture and noise SCMs of a scenario.

    Returns ``(r_yy, r_nn)`` of size ``M x M``.
    """
    var = source_variance(scenario.config.sample_range)
    thermal = np.repeat(np.asarray(scenario.thermal_std) ** 2,
                        scenario.config.sensors_per_node)
    r_ss = var * scenario.a @ scenario.a.conj().T
    r_nn = var * scenario.b @ scenario.b.conj().T + np.diag(thermal)
    return hermitianize(r_ss + r_nn), hermitianize(r_nn)


def load_diagonal(a, eps_rel=1e-10):
    """Return ``a + eps_rel * (trace(a) / D) * I``."""
    a = np.asarray(a, dtype=complex)
    dim = a.shape[0]
    if dim == 0:
        return a.copy()
    level = eps_rel * np.real(np.trace(a)) / dim
    return a + level * np.eye(dim)


def random_init_scm(dim, rng, sample_range=(-0.5, 0.5)):
    """Random positive-definite SCM ``0.5 I + 0.05 H H^H`` with uniform ``H``."""
    lo, hi = sample_range
    h = rng.uniform(lo, hi, (dim, dim)) + 1j * rng.uniform(lo, hi, (dim, dim))
    return hermitianize(0.5 * np.eye(dim) + 0.05 * h @ h.conj().T)


def with_loading(func, r_yy, r_nn, *args, **kwargs):
    """Call ``func(r_yy, r_nn, ...)``, loading ``r_nn`` if it fails to factor.

    Loading levels follow `LOADING_SCHEDULE`; if the last level still fails
    the `NotPositiveDefinite` error propagates.
    """
    try:
        return func(r_yy, r_nn, *args, **kwargs)
    except NotPositiveDefinite:
        pass
    for i, eps in enumerate(LOADING_SCHEDULE):
        log.warning('r_nn not positive definite, loading with eps_rel=%g', eps)
        try:
            return func(r_yy, load_diagonal(r_nn, eps), *args, **kwargs)
        except NotPositiveDefinite:
            if i == len(LOADING_SCHEDULE) - 1:
                raise
