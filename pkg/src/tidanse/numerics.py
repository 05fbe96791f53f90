"""Dense complex linear algebra with deterministic conventions.

Everything here is a pure function of its inputs. Hermitian inputs are
re-symmetrized as ``(A + A^H) / 2`` before factorization, which absorbs the
round-off drift of recursive covariance estimates.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceFailure, NotPositiveDefinite, ShapeMismatch

# Inputs further than this from Hermitian are treated as caller bugs.
HERMITIAN_RTOL = 1e-8


def hermitianize(a):
    """Return ``(a + a^H) / 2`` as a complex128 array."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def _check_hermitian(a, name='a'):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f'{name} must be square, got shape {a.shape}')
    scale = np.linalg.norm(a)
    if scale > 0 and np.linalg.norm(a - a.conj().T) > HERMITIAN_RTOL * scale:
        raise ValueError(f'{name} is not Hermitian')
    return hermitianize(a)


def fix_phase(u):
    """Rotate each column so its largest-magnitude entry is real positive.

    Ties are resolved by the lowest row index (``argmax`` semantics).
    """
    u = np.array(u, dtype=complex, copy=True)
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    pivots = u[idx, np.arange(u.shape[1])]
    mags = np.abs(pivots)
    phase = np.where(mags > 0, pivots / np.where(mags > 0, mags, 1), 1)
    return u * phase.conj()[np.newaxis, :]


def cholesky(a):
    """Lower Cholesky factor ``L`` with ``L @ L^H == a``.

    Raises `NotPositiveDefinite` when a pivot is not strictly positive, which
    is the caller's cue to apply diagonal loading.
    """
    a = _check_hermitian(a)
    if a.shape[0] == 0:
        return a.copy()
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if not np.all(np.isfinite(L)) or np.any(np.real(np.diag(L)) <= 0):
        raise NotPositiveDefinite('non-positive or non-finite pivot')
    return L


def hermitian_eig(a):
    """Eigendecomposition of a Hermitian matrix.

    Returns
    -------
    u : ndarray
        Unitary matrix of eigenvectors (columns), phase-fixed by `fix_phase`.
    lam : ndarray
        Real eigenvalues in descending order.
    """
    a = _check_hermitian(a)
    try:
        lam, u = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return fix_phase(u[:, ::-1]), lam[::-1].copy()


@dataclass(frozen=True)
class GevdResult:
    """Generalized eigendecomposition of the pencil ``{r_yy, r_nn}``.

    ``q @ diag(sigma) @ q^H == r_yy`` and ``q @ q^H == r_nn``, with
    ``q = chol @ u`` where ``chol`` is the Cholesky factor of ``r_nn`` and
    ``u`` is unitary. Keeping both factors lets callers apply ``q^{-H}``
    through triangular solves instead of an explicit inverse.
    """
    q: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    u: np.ndarray

    def apply_q_inv_h(self, x):
        """Compute ``q^{-H} @ x`` as ``L^{-H} (u @ x)``."""
        return sla.solve_triangular(self.chol, self.u @ x, lower=True, trans='C')

    def apply_q_h(self, x):
        """Compute ``q^H @ x``."""
        return self.u.conj().T @ (self.chol.conj().T @ x)


def gevd_pencil(r_yy, r_nn):
    """Generalized eigenvalue decomposition of a Hermitian-definite pencil.

    ``r_nn`` is factored as ``L L^H``; the standard problem
    ``L^{-1} r_yy L^{-H} = U diag(sigma) U^H`` is then solved and
    ``Q = L U``. Generalized eigenvalues come out in descending order.
    """
    r_yy = _check_hermitian(r_yy, 'r_yy')
    r_nn = _check_hermitian(r_nn, 'r_nn')
    if r_yy.shape != r_nn.shape:
        raise ShapeMismatch(f'pencil shapes differ: {r_yy.shape} vs {r_nn.shape}')
    L = cholesky(r_nn)
    tmp = sla.solve_triangular(L, r_yy, lower=True)
    std = sla.solve_triangular(L, tmp.conj().T, lower=True)
    u, sigma = hermitian_eig(hermitianize(std))
    return GevdResult(q=L @ u, sigma=sigma, chol=L, u=u)
