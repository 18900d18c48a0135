import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as leg
from scipy.linalg import eigh
from scipy.special import erfc

from stokesdmk import windows as W

GL_X, GL_W = leg.leggauss(200)

# [DERIVED] 1 - mu_0(c), mu_0 the top eigenvalue of the sinc kernel
# sin(c(x - y)) / (pi (x - y)) on [-1, 1]; 200-node Gauss-Legendre Nystrom solve
# (see _nystrom_mu below), frozen.  Classical values 0.5726 / 0.8806 / 0.99589
# for c = 1, 2, 4 agree.
FROZEN_ONE_MINUS_MU = {
    1.0: 0.42741821936210433,
    2.0: 0.11944007768268694,
    4.0: 0.00411450957032633,
    10.0: 4.4088073858361554e-08,
}


def _nystrom_mu(c):
    d = GL_X[:, None] - GL_X[None, :]
    safe = np.where(d == 0, 1.0, d)
    k = np.where(d == 0, c / np.pi, np.sin(c * d) / (np.pi * safe))
    s = np.sqrt(GL_W)
    return eigh(s[:, None] * k * s[None, :], eigvals_only=True)[-1]


@pytest.mark.parametrize("c", sorted(FROZEN_ONE_MINUS_MU))
def test_nystrom_oracle_reproduces_frozen(c):
    assert 1 - _nystrom_mu(c) == pytest.approx(FROZEN_ONE_MINUS_MU[c], rel=1e-7)


@pytest.mark.parametrize("c", sorted(FROZEN_ONE_MINUS_MU))
def test_prolate_concentration_matches_oracle(c):
    w = W.build_prolate(c)
    mu = c / (2 * np.pi) * w.lambda0**2
    assert 1 - mu == pytest.approx(FROZEN_ONE_MINUS_MU[c], rel=1e-6, abs=1e-14)


@pytest.mark.parametrize("c", [3.0, 10.0, 20.0, 33.5])
def test_prolate_is_eigenfunction_of_finite_fourier_transform(c):
    # int_{-1}^{1} exp(i c x t) psi(t) dt = lambda psi(x)
    w = W.build_prolate(c)
    x = np.linspace(-1, 1, 9)
    lhs = np.array([np.sum(GL_W * np.cos(c * xv * GL_X) * w(GL_X)) for xv in x])
    assert np.allclose(lhs, w.lambda0 * w(x), atol=1e-12 * w.lambda0 * w(0.0))


@pytest.mark.parametrize("c", [5.0, 17.8, 33.5])
def test_prolate_fourier_matches_quadrature(c):
    w = W.build_prolate(c)
    k = np.linspace(0, c, 25)
    quad = np.array([np.sum(GL_W * np.cos(kv * GL_X) * w(GL_X)) for kv in k])
    assert np.allclose(W.window_fourier(w, k), quad, atol=1e-12)
    assert np.all(W.window_fourier(w, [c * 1.01, 2 * c]) == 0)


@given(st.floats(2.0, 50.0))
@settings(max_examples=25, deadline=None)
def test_prolate_unit_mass_even_compact(c):
    w = W.build_prolate(c)
    assert np.sum(GL_W * w(GL_X)) == pytest.approx(1.0, abs=1e-13)
    assert W.window_fourier(w, 0.0) == pytest.approx(1.0, abs=1e-14)
    r = np.linspace(0, 1, 11)
    assert np.allclose(w(r), w(-r))
    assert np.all(w(np.array([1.0001, 3.0])) == 0)


@given(st.floats(0.05, 2.0), st.floats(0.0, 3.0))
@settings(max_examples=50, deadline=None)
def test_gaussian_closed_forms(sigma, r):
    w = W.build_gaussian(sigma)
    assert w(r) == pytest.approx(np.exp(-r * r / sigma**2) / (sigma * np.sqrt(np.pi)))
    assert W.phi_tail(w, r) == pytest.approx(erfc(r / sigma), abs=1e-15)
    k = r * 5
    assert W.window_fourier(w, k) == pytest.approx(np.exp(-k * k * sigma**2 / 4))


@pytest.mark.parametrize("kind", [W.PROLATE, W.GAUSSIAN])
def test_derivatives_match_finite_differences(kind):
    w = W.build_prolate(12.0) if kind == W.PROLATE else W.build_gaussian(0.3)
    r = np.linspace(0.05, 0.9, 7)
    h = 1e-5
    for n in (1, 2, 3):
        lower = w.deriv(r, n - 1) if n > 1 else w(r)
        fd = ((w.deriv(r + h, n - 1) if n > 1 else w(r + h))
              - (w.deriv(r - h, n - 1) if n > 1 else w(r - h))) / (2 * h)
        assert np.allclose(w.deriv(r, n), fd, rtol=1e-5, atol=1e-6 * np.abs(lower).max())
    k = np.linspace(0.5, 10, 5)
    fd = (W.window_fourier(w, k + h) - W.window_fourier(w, k - h)) / (2 * h)
    assert np.allclose(W.window_fourier_deriv(w, k, 1), fd, atol=1e-8)


def test_tail_and_moments_consistent_with_quadrature():
    w = W.build_prolate(15.0)
    r = 0.37
    t = 0.5 * (1 - r) * (GL_X + 1) + r
    tail = 2 * 0.5 * (1 - r) * np.sum(GL_W * w(t))
    assert W.phi_tail(w, r) == pytest.approx(tail, abs=1e-14)
    s = 0.5 * r * (GL_X + 1)
    assert W.phi_moment(w, r, 1) == pytest.approx(0.5 * r * np.sum(GL_W * s * w(s)), abs=1e-14)


def test_trunc_error_decreases_with_c():
    te = [W.build_prolate(c).trunc_error for c in (10.0, 20.0, 30.0)]
    assert te[0] > te[1] > te[2] > 0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        W.build_prolate(-1.0)
    with pytest.raises(ValueError):
        W.build_gaussian(0.0)
    with pytest.raises(ValueError):
        W.build_gaussian(0.3).deriv(0.1, 4)


def test_cache_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setenv(W.CACHE_ENV, str(tmp_path))
    a = W.build_prolate(21.0)
    files = list(tmp_path.glob("pswf_*.bin"))
    assert len(files) == 1
    c, coeffs = W.load_coeffs(files[0])
    assert c == 21.0
    b = W.build_prolate(21.0)  # served from the cache
    assert np.array_equal(a.legendre_coeffs, b.legendre_coeffs)
    files[0].write_bytes(b"junk" + files[0].read_bytes()[4:])
    with pytest.raises(ValueError):
        W.load_coeffs(files[0])
    assert np.array_equal(W.build_prolate(21.0).legendre_coeffs, a.legendre_coeffs)
