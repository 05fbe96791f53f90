"""Centralized multichannel Wiener filters (full-rank and GEVD-based)."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ShapeMismatch, SingularCovariance
from .numerics import gevd_pencil, hermitianize

COND_LIMIT = 1e12


@dataclass
class Filter:
    w: np.ndarray          # D x J
    rank_used: object      # int, or 'full'
    sel: tuple             # indices of the J desired channels

    @property
    def dims(self):
        return self.w.shape


def selection_matrix(dim, sel):
    """``dim x len(sel)`` matrix whose columns pick the channels in ``sel``."""
    e = np.zeros((dim, len(sel)), dtype=complex)
    e[list(sel), np.arange(len(sel))] = 1
    return e


def mwf(r_yy, r_ss, sel):
    """Multichannel Wiener filter ``W = r_yy^{-1} r_ss E_sel``.

    Raises `SingularCovariance` if ``cond(r_yy) >= 1e12``.
    """
    r_yy = hermitianize(r_yy)
    r_ss = np.asarray(r_ss, dtype=complex)
    if r_yy.shape != r_ss.shape:
        raise ShapeMismatch(f'r_yy {r_yy.shape} vs r_ss {r_ss.shape}')
    cond = np.linalg.cond(r_yy)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise SingularCovariance(f'condition number {cond:.3e} exceeds {COND_LIMIT:.0e}')
    rhs = r_ss[:, list(sel)]
    w = sla.solve(r_yy, rhs, assume_a='her')
    return Filter(w=w, rank_used='full', sel=tuple(sel))


def gevd_weights(sigma, rank, clamp=True):
    """Diagonal of the GEVD gain matrix: ``1 - 1/sigma_j`` for ``j < rank``, else 0.

    With ``clamp`` the gains are floored at 0, so directions where the noise
    estimate exceeds the mixture estimate are discarded rather than inverted.
    """
    sigma = np.asarray(sigma, dtype=float)
    lam = np.zeros_like(sigma)
    top = sigma[:rank]
    with np.errstate(divide='ignore', invalid='ignore'):
        g = 1.0 - 1.0 / top
    if clamp:
        g = np.where(top > 1.0, g, 0.0)
    lam[:rank] = g
    return lam


def gevd_mwf(r_yy, r_nn, rank, sel, clamp=True):
    """Rank-``rank`` GEVD-based MWF ``W = Q^{-H} Lambda Q^H E_sel``.

    ``Q`` and ``Sigma`` come from `gevd_pencil`, so ``Q^{-H}`` is applied via
    the Cholesky factor of ``r_nn``. `NotPositiveDefinite` propagates when
    ``r_nn`` cannot be factored.
    """
    dim = np.shape(r_yy)[0]
    if not 1 <= rank <= dim:
        raise ValueError(f'rank must lie in [1, {dim}], got {rank}')
    res = gevd_pencil(r_yy, r_nn)
    lam = gevd_weights(res.sigma, rank, clamp=clamp)
    qh_e = res.apply_q_h(selection_matrix(dim, sel))
    w = res.apply_q_inv_h(lam[:, np.newaxis] * qh_e)
    return Filter(w=w, rank_used=int(rank), sel=tuple(sel))


def gevd_mwf_multi(r_yy, r_nn, rank, sels, clamp=True):
    """`gevd_mwf` for several selections sharing one pencil decomposition."""
    flat = [i for sel in sels for i in sel]
    w = gevd_mwf(r_yy, r_nn, rank, flat, clamp=clamp).w
    out, start = [], 0
    for sel in sels:
        out.append(Filter(w=w[:, start:start + len(sel)], rank_used=int(rank), sel=tuple(sel)))
        start += len(sel)
    return out


def implied_rss(r_yy, r_nn, rank):
    """Low-rank desired-signal SCM ``Q Delta Q^H`` with ``Delta_jj = sigma_j - 1`` for ``j < rank``."""
    res = gevd_pencil(r_yy, r_nn)
    delta = np.zeros_like(res.sigma)
    delta[:rank] = res.sigma[:rank] - 1
    return (res.q * delta) @ res.q.conj().T


def apply_filter(f, y):
    """Filter output ``W^H y``."""
    w = f.w if isinstance(f, Filter) else np.asarray(f)
    y = np.asarray(y)
    if w.shape[0] != y.shape[0]:
        raise ShapeMismatch(f'filter has {w.shape[0]} inputs, signal has {y.shape[0]} rows')
    return w.conj().T @ y
