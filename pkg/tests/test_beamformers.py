import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_hpd, rel
from tidanse.beamformers import (apply_filter, gevd_mwf, gevd_mwf_multi, gevd_weights,
                                 implied_rss, mwf, selection_matrix)
from tidanse.errors import DimensionMismatch, SingularCovariance
from tidanse.numerics import gevd_pencil


def test_mwf_zero_desired(rng):
    f = mwf(random_hpd(rng, 4), np.zeros((4, 4)), [0, 1])
    assert np.all(f.w == 0) and f.rank_used == 'full'


def test_mwf_scalar():
    assert np.allclose(mwf(np.array([[2.0]]), np.array([[1.0]]), [0]).w, [[0.5]])


def test_mwf_residual(rng):
    r_yy, r_ss = random_hpd(rng, 6), random_hpd(rng, 6)
    f = mwf(r_yy, r_ss, [1, 4])
    rhs = r_ss @ selection_matrix(6, [1, 4])
    assert rel(r_yy @ f.w, rhs) <= 1e-10


def test_mwf_singular_guard():
    with pytest.raises(SingularCovariance):
        mwf(np.diag([1.0, 1e-14]), np.eye(2), [0])


def test_gevd_full_rank_equals_mwf(rng):
    r_yy, r_nn = random_hpd(rng, 5), random_hpd(rng, 5)
    a = gevd_mwf(r_yy, r_nn, 5, [0, 2], clamp=False).w
    b = mwf(r_yy, r_yy - r_nn, [0, 2]).w
    assert rel(a, b) <= 1e-10


def test_gevd_equal_pencil_is_zero(rng):
    a = random_hpd(rng, 4)
    assert np.allclose(gevd_mwf(a, a, 2, [0]).w, 0, atol=1e-12)


def test_gevd_scalar():
    assert np.allclose(gevd_mwf(np.array([[2.0]]), np.array([[1.0]]), 1, [0]).w, [[0.5]])


def test_gevd_against_independent_oracle(rng):
    # scipy generalized solver: X^H r_nn X = I, so Q^{-H} = X and Q^H = X^{-1}
    import scipy.linalg as sla
    r_yy, r_nn = random_hpd(rng, 6), random_hpd(rng, 6)
    s, x = sla.eigh(r_yy, r_nn)
    s, x = s[::-1], x[:, ::-1]
    lam = np.zeros(6)
    lam[:2] = 1 - 1 / s[:2]
    oracle = x @ np.diag(lam) @ np.linalg.inv(x) @ selection_matrix(6, [3])
    assert rel(gevd_mwf(r_yy, r_nn, 2, [3], clamp=False).w, oracle) <= 1e-10


def test_clamp_floors_negative_gains():
    assert np.allclose(gevd_weights([4.0, 0.5, 0.2], 2), [0.75, 0.0, 0.0])
    assert np.allclose(gevd_weights([4.0, 0.5, 0.2], 2, clamp=False), [0.75, -1.0, 0.0])


def test_rank_bounds(rng):
    with pytest.raises(ValueError):
        gevd_mwf(random_hpd(rng, 3), np.eye(3), 4, [0])


def test_implied_rss_rank(rng):
    r = implied_rss(random_hpd(rng, 6), random_hpd(rng, 6), 2)
    sv = np.linalg.svd(r, compute_uv=False)
    assert sv[2] <= 1e-10 * sv[0]


def test_depends_only_on_top_directions(rng):
    r_yy, r_nn = random_hpd(rng, 6), random_hpd(rng, 6)
    res = gevd_pencil(r_yy, r_nn)
    sigma = res.sigma.copy()
    sigma[3:] = 0.3      # alter trailing directions only
    altered = res.q @ np.diag(sigma) @ res.q.conj().T
    assert rel(gevd_mwf(altered, r_nn, 3, [0, 1]).w, gevd_mwf(r_yy, r_nn, 3, [0, 1]).w) <= 1e-10


def test_multi_matches_single(rng):
    r_yy, r_nn = random_hpd(rng, 8), random_hpd(rng, 8)
    sels = [[0, 1], [4, 6], [7, 2]]
    for f, sel in zip(gevd_mwf_multi(r_yy, r_nn, 2, sels), sels):
        assert np.allclose(f.w, gevd_mwf(r_yy, r_nn, 2, sel).w, atol=1e-14)
        assert f.sel == tuple(sel)


def test_apply_filter_examples(rng):
    y = rng.standard_normal((4, 10)) + 1j * rng.standard_normal((4, 10))
    assert np.array_equal(apply_filter(selection_matrix(4, [2, 0]), y), y[[2, 0]])
    assert np.all(apply_filter(np.zeros((4, 2)), y) == 0)
    f = mwf(random_hpd(rng, 4), random_hpd(rng, 4), [0])
    y2 = rng.standard_normal((4, 10)) + 0j
    lhs = apply_filter(f, 2.5 * y + y2)
    assert np.allclose(lhs, 2.5 * apply_filter(f, y) + apply_filter(f, y2), atol=1e-13)
    with pytest.raises(DimensionMismatch):
        apply_filter(f, y[:3])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31))
def test_full_rank_identity_property(dim, seed):
    g = np.random.default_rng(seed)
    r_yy, r_nn = random_hpd(g, dim, 0.5), random_hpd(g, dim, 0.5)
    a = gevd_mwf(r_yy, r_nn, dim, [0], clamp=False).w
    b = mwf(r_yy, r_yy - r_nn, [0]).w
    assert np.linalg.norm(a - b) <= 1e-10 * max(np.linalg.norm(b), 1e-300) + 1e-14
