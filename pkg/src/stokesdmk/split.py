"""Kernel splitting: biharmonic mollifier, mollified/residual Stokes kernels.

All pair kernels are written in a two-coefficient radial form

    Stokeslet   K(x) f     = c1(r) f + c2(r) x (x.f)
    Stresslet   K(x) (f n) = c1(r) [f (x.n) + x (f.n) + n (x.f)] + c2(r) x (x.f)(x.n)
    Rotlet (3D) K(x) f     = c1(r) f x x
    Rotlet (2D) K(x) t     = c1(r) t (x2, -x1)

which is shared by the exact, mollified and residual parts.  Residual
coefficients are stored as smooth "numerator" functions of the scaled
radius rho in [0, 1] (S_diag, S_offd, ... in 3D), fitted by
Chebyshev interpolation.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import factorial
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import legendre as leg
from scipy.special import jv, spherical_jn

from . import windows as W

STOKESLET = "stokeslet"
STRESSLET = "stresslet"
ROTLET = "rotlet"
BIHARMONIC = "biharmonic"
HARMONIC = "harmonic"
STOKES_KERNELS = (STOKESLET, STRESSLET, ROTLET)
KERNELS = STOKES_KERNELS + (BIHARMONIC, HARMONIC)
KERNEL_IDS = {k: i for i, k in enumerate(KERNELS)}

_PI = np.pi


def window_radius(dim):
    """Truncation radius R = 1 + sqrt(d) of the free-space Fourier kernels."""
    return 1.0 + np.sqrt(dim)


def corr_const(kernel, dim, R=None):
    """Constant restoring the Stokeslet after Fourier truncation at R."""
    if kernel != STOKESLET:
        return 0.0
    R = window_radius(dim) if R is None else R
    return (1.0 - np.log(R)) / (4 * _PI) if dim == 2 else 1.0 / (4 * _PI * R)


def scale_exponent(kernel, dim):
    """A such that a kernel at length scale nu equals nu^A K_1(x/nu)."""
    if kernel == STOKESLET:
        return 4 - 2 - dim
    if kernel == STRESSLET:
        return 4 - 3 - dim
    if kernel == ROTLET:
        return 2 - 1 - dim
    raise ValueError(kernel)


def n_coeffs(kernel):
    return 1 if kernel == ROTLET else 2


# ---------------------------------------------------------------- mollifier

def window_taylor(w, nterms=8):
    """Taylor coefficients a_n of phi_hat(k) = sum a_n k^(2n).

    Uses the moments of phi: a_n = (-1)^n int phi x^(2n) dx / (2n)!.
    """
    if w.kind == W.GAUSSIAN:
        s = -(w.sigma**2) / 4
        return np.array([s**n / factorial(n) for n in range(nterms)])
    x, wt = leg.leggauss(200)
    ph = W.window_eval(w, x)
    return np.array([(-1) ** n * np.sum(wt * ph * x ** (2 * n)) / factorial(2 * n)
                     for n in range(nterms)])


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Biharmonic mollifier gamma_hat(k) = phi_hat(k) - k phi_hat'(k)/2."""

    window: W.WindowFunction
    taylor: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_window(cls, w):
        a = window_taylor(w)
        # gamma_hat = sum a_n (1 - n) k^(2n)
        return cls(w, a * (1 - np.arange(a.size)))

    def fourier(self, k):
        k = np.abs(np.asarray(k, dtype=float))
        return W.window_fourier(self.window, k) - 0.5 * k * W.window_fourier_deriv(self.window, k, 1)

    def fourier_deriv2(self, k):
        k = np.asarray(k, dtype=float)
        return -0.5 * k * W.window_fourier_deriv(self.window, k, 3)

    def screen(self, x):
        """1-D inverse transform gamma(x) = 3/2 phi + x phi'/2."""
        x = np.asarray(x, dtype=float)
        return 1.5 * W.window_eval(self.window, x) + 0.5 * x * self.window.deriv(x, 1)

    def _screen_d1_over_r(self, r):
        # gamma_1'(r)/r = 2 phi'/r + phi''/2, even and smooth
        r = np.asarray(r, dtype=float)
        w = self.window
        small = np.abs(r) < 1e-8
        rs = np.where(small, 1.0, r)
        q = np.where(small, w.deriv(0.0, 2), w.deriv(rs, 1) / rs)
        out = 2 * q + 0.5 * w.deriv(r, 2)
        if w.kind == W.PROLATE:
            out = np.where(np.abs(r) <= 1.0, out, 0.0)
        return out

    def radial(self, r, dim):
        """The radially symmetric d-dimensional mollifier with transform gamma_hat(|k|)."""
        r = np.asarray(r, dtype=float)
        if dim == 1:
            return self.screen(r)
        if dim == 3:
            return -self._screen_d1_over_r(r) / (2 * _PI)
        if dim == 2:
            # inverse Abel transform, s = sqrt(r^2 + t^2) removes the endpoint singularity
            top = 1.0 if self.window.kind == W.PROLATE else 12.0 * self.window.sigma
            t, wt = leg.leggauss(120)
            flat = np.atleast_1d(r).ravel()
            out = np.empty_like(flat)
            for i, ri in enumerate(flat):
                if ri >= top:
                    out[i] = 0.0
                    continue
                tmax = np.sqrt(top * top - ri * ri)
                tt = 0.5 * tmax * (t + 1)
                s = np.sqrt(ri * ri + tt * tt)
                out[i] = -0.5 * tmax * np.sum(wt * self._screen_d1_over_r(s)) / _PI
            return out.reshape(np.shape(r))
        raise ValueError("dim must be 1, 2 or 3")


def mollifier_fourier(m, k):
    return m.fourier(k)


# ------------------------------------------------------- truncated kernels

_SERIES_X = 2.0


def _series(x, coef):
    # sum coef[n] x^(2n), Horner in x^2
    x2 = x * x
    out = np.zeros_like(x)
    for c in coef[::-1]:
        out = out * x2 + c
    return out


# coefficients of (numerator)/x^4 as power series in x^2
_TB3 = np.array([(-1) ** n * (n - 1) / factorial(2 * n + 1) for n in range(2, 24)])
_TB2 = np.array([(-1) ** (n + 1) * (1 - n) / factorial(n) ** 2 / 4.0**n for n in range(2, 24)])
_TH3 = np.array([-((-1) ** n) / factorial(2 * n) for n in range(1, 24)])
_TH2 = np.array([(-1) ** (n + 1) / factorial(n) ** 2 / 4.0**n for n in range(1, 24)])


def truncated_biharmonic_fourier(k, R, dim):
    """Transform of the biharmonic kernel truncated at radius R.

    3D: (1 + cos(kR)/2 - 3 sin(kR)/(2kR))/k^4;  2D: (1 - J0(kR) - kR J1(kR)/2)/k^4.
    Small kR uses the power series (limits R^4/120 and R^4/64).
    """
    k = np.abs(np.asarray(k, dtype=float))
    x = k * R
    small = x < _SERIES_X
    xs = np.where(small, x, 1.0)
    xl = np.where(small, _SERIES_X, x)
    if dim == 3:
        ser = _series(xs, _TB3)
        big = (1 + np.cos(xl) / 2 - 1.5 * np.sin(xl) / xl) / xl**4
    elif dim == 2:
        ser = _series(xs, _TB2)
        big = (1 - jv(0, xl) - 0.5 * xl * jv(1, xl)) / xl**4
    else:
        raise ValueError("dim must be 2 or 3")
    return R**4 * np.where(small, ser, big)


def truncated_harmonic_fourier(k, R, dim):
    """Transform of the (shifted) harmonic kernel truncated at R."""
    k = np.abs(np.asarray(k, dtype=float))
    x = k * R
    small = x < _SERIES_X
    xs = np.where(small, x, 1.0)
    xl = np.where(small, _SERIES_X, x)
    if dim == 3:
        ser = _series(xs, _TH3)
        big = (1 - np.cos(xl)) / xl**2
    elif dim == 2:
        ser = _series(xs, _TH2)
        big = (1 - jv(0, xl)) / xl**2
    else:
        raise ValueError("dim must be 2 or 3")
    return R**2 * np.where(small, ser, big)


def radial_symbol(kernel, dim, mollifier, k, truncated=True, R=None):
    """Scalar factor F(k) multiplying the polynomial part of the symbol.

    Biharmonic-derived kernels use gamma_hat B_hat; the rotlet uses phi_hat H_hat.
    """
    k = np.abs(np.asarray(k, dtype=float))
    R = window_radius(dim) if R is None else R
    if kernel in (STOKESLET, STRESSLET, BIHARMONIC):
        g = mollifier.fourier(k)
        if truncated:
            return truncated_biharmonic_fourier(k, R, dim) * g
        return g / k**4
    g = W.window_fourier(mollifier.window, k)
    if truncated:
        return truncated_harmonic_fourier(k, R, dim) * g
    return g / k**2


# --------------------------------------------------------- exact kernels

def exact_coeffs(kernel, dim, r):
    """(c1, c2) of the exact kernel in the two-coefficient form."""
    r = np.asarray(r, dtype=float)
    if dim == 3:
        if kernel == STOKESLET:
            return 1 / (8 * _PI * r), 1 / (8 * _PI * r**3)
        if kernel == STRESSLET:
            return 0 * r, -3 / (4 * _PI * r**5)
        if kernel == ROTLET:
            return 1 / (8 * _PI * r**3), 0 * r
    elif dim == 2:
        if kernel == STOKESLET:
            return -np.log(r) / (4 * _PI), 1 / (4 * _PI * r**2)
        if kernel == STRESSLET:
            return 0 * r, -1 / (_PI * r**4)
        if kernel == ROTLET:
            return 1 / (4 * _PI * r**2), 0 * r
    raise ValueError(f"unsupported kernel/dim {kernel}/{dim}")


def coeff_tensor(kernel, dim, x, c1, c2):
    """Assemble the kernel tensor from (c1, c2) at points x (..., d)."""
    x = np.asarray(x, dtype=float)
    c1 = np.asarray(c1)[..., None]
    c2 = np.asarray(c2)[..., None]
    eye = np.eye(dim)
    if kernel == STOKESLET:
        return c1[..., None] * eye + c2[..., None] * x[..., :, None] * x[..., None, :]
    if kernel == STRESSLET:
        dx = (eye[:, :, None] * x[..., None, None, :] + eye[None, :, :] * x[..., :, None, None]
              + eye[:, None, :] * x[..., None, :, None])
        xxx = x[..., :, None, None] * x[..., None, :, None] * x[..., None, None, :]
        return c1[..., None, None] * dx + c2[..., None, None] * xxx
    if kernel == ROTLET:
        if dim == 3:
            eps = _levi_civita()
            return c1[..., None] * np.einsum("jlm,...m->...jl", eps, x)
        return c1 * np.stack([x[..., 1], -x[..., 0]], axis=-1)
    raise ValueError(kernel)


def _levi_civita():
    e = np.zeros((3, 3, 3))
    e[0, 1, 2] = e[1, 2, 0] = e[2, 0, 1] = 1
    e[0, 2, 1] = e[2, 1, 0] = e[1, 0, 2] = -1
    return e


def kernel_tensor(kernel, dim, x):
    """Exact Stokes kernel tensor at x (..., d)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    return coeff_tensor(kernel, dim, x, *exact_coeffs(kernel, dim, r))


def apply_coeffs(kernel, dim, x, c1, c2, f, n=None):
    """Contract the two-coefficient kernel with strengths (pairwise, broadcast)."""
    c1 = np.asarray(c1)[..., None]
    c2 = np.asarray(c2)[..., None]
    if kernel == STOKESLET:
        return c1 * f + c2 * x * np.sum(x * f, -1, keepdims=True)
    if kernel == STRESSLET:
        xf = np.sum(x * f, -1, keepdims=True)
        xn = np.sum(x * n, -1, keepdims=True)
        fn = np.sum(f * n, -1, keepdims=True)
        return c1 * (f * xn + x * fn + n * xf) + c2 * x * xf * xn
    if kernel == ROTLET:
        if dim == 3:
            return c1 * np.cross(f, x)
        return c1 * np.asarray(f)[..., None] * np.stack([x[..., 1], -x[..., 0]], axis=-1)
    raise ValueError(kernel)


# ------------------------------------------- 3D closed-form residual pieces

def residual_radial(w, name, r):
    """Closed-form 3D residual functions S_diag, S_offd, T_diag, T_offd, O_offd, B_R, Phi."""
    r = np.asarray(r, dtype=float)
    Phi = W.phi_tail(w, r)
    ph = W.window_eval(w, r)
    if name == "S_diag":
        return Phi - 2 * r * ph
    if name in ("S_offd", "O_offd"):
        return Phi + 2 * r * ph
    dph = w.deriv(r, 1)
    if w.kind == W.PROLATE:
        dph = np.where(r <= 1.0, dph, 0.0)
    if name == "T_diag":
        return -2 * r * r * dph
    if name == "T_offd":
        return Phi + 2 * r * ph - (2.0 / 3.0) * r * r * dph
    if name == "Phi":
        return Phi
    if name == "B_R":
        return _biharmonic_residual_3d(w, r)
    raise ValueError(name)


def _biharmonic_residual_3d(w, r):
    m0 = W.phi_moment(w, r, 0)
    m1 = W.phi_moment(w, r, 1)
    m1inf = W.phi_moment(w, np.inf if w.kind == W.GAUSSIAN else 1.0, 1)
    return -(r - 2 * r * m0 + 2 * m1 - 2 * m1inf) / (8 * _PI)


# numerator names tabled per (kernel, dim)
_NUMERATORS = {
    (STOKESLET, 3): ("S_diag", "S_offd"),
    (STRESSLET, 3): ("T_diag", "T_offd"),
    (ROTLET, 3): ("O_offd",),
    (STOKESLET, 2): ("S_moll_diag", "S_offd"),
    (STRESSLET, 2): ("T_diag", "T_offd"),
    (ROTLET, 2): ("O_offd",),
}


def numerators_to_coeffs(kernel, dim, rho, n1, n2=None):
    """Residual (c1, c2) at scale one from tabled numerators."""
    rho = np.asarray(rho, dtype=float)
    if n2 is None:
        n2 = 0 * rho
    if dim == 3:
        if kernel == STOKESLET:
            return n1 / (8 * _PI * rho), n2 / (8 * _PI * rho**3)
        if kernel == STRESSLET:
            return n1 / (8 * _PI * rho**3), -3 * n2 / (4 * _PI * rho**5)
        return n1 / (8 * _PI * rho**3), 0 * rho
    if kernel == STOKESLET:
        return -np.log(rho) / (4 * _PI) - n1, n2 / (4 * _PI * rho**2)
    if kernel == STRESSLET:
        return n1, -n2 / (_PI * rho**4)
    return n1 / (4 * _PI * rho**2), 0 * rho


def coeffs_to_numerators(kernel, dim, rho, c1m, c2m):
    """Numerators of the residual, given mollified (c1, c2) at scale one."""
    rho = np.asarray(rho, dtype=float)
    p = 8 * _PI if dim == 3 else 4 * _PI
    if kernel == STOKESLET:
        if dim == 3:
            return 1 - p * rho * c1m, 1 - p * rho**3 * c2m
        return c1m, 1 - p * rho**2 * c2m
    if kernel == STRESSLET:
        if dim == 3:
            return -p * rho**3 * c1m, 1 + (4 * _PI / 3) * rho**5 * c2m
        return -c1m, 1 + _PI * rho**4 * c2m
    if kernel == ROTLET:
        return (1 - p * rho**dim * c1m,)
    raise ValueError(kernel)


# ----------------------------------------------------- Bessel helpers

def bessel_g(n, z, dim):
    """g_n(z) = Z_n(z)/z^n with Z = J (2D) or spherical j (3D); smooth at z = 0."""
    z = np.abs(np.asarray(z, dtype=float))
    small = z < 2.0
    zs = np.where(small, z, 0.0)
    zl = np.where(small, 2.0, z)
    ser = np.zeros_like(zs)
    if dim == 2:
        t = -zs * zs / 4
        term = np.full_like(zs, 1.0 / (factorial(n) * 2.0**n))
        for m in range(30):
            ser = ser + term
            term = term * t / ((m + 1) * (m + 1 + n))
        big = jv(n, zl) / zl**n
    else:
        t = -zs * zs / 2
        dfact = np.prod(np.arange(2 * n + 1, 0, -2, dtype=float))
        term = np.full_like(zs, 1.0 / dfact)
        for m in range(30):
            ser = ser + term
            term = term * t / ((m + 1) * (2 * n + 2 * m + 3))
        big = spherical_jn(n, zl) / zl**n
    return np.where(small, ser, big)


# ------------------------------------------------- numeric pipeline

def _k_panels(w, tol, width=1.0, npan=32):
    if w.kind == W.PROLATE:
        kmax = w.c
    else:
        # exp(-k^2 s^2/4)(1 + k^2 s^2/4) < tol^2
        kmax = 2.0 * np.sqrt(-np.log(tol * tol * 1e-4)) / w.sigma + 4.0 / w.sigma
    npanels = max(1, int(np.ceil(kmax / width)))
    edges = np.linspace(0.0, kmax, npanels + 1)
    x, wt = leg.leggauss(npan)
    h = np.diff(edges)[:, None] / 2
    k = (edges[:-1, None] + h * (x[None, :] + 1)).ravel()
    wk = (h * wt[None, :]).ravel()
    return k, wk


class PipelineError(RuntimeError):
    pass


def mollified_coeffs_numeric(kernel, dim, mollifier, rho, tol=1e-14, panel_width=1.0,
                             R=None):
    """Mollified (c1, c2) at scale one via Gauss-Legendre radial integrals.

    Uses the kernels truncated at R (default 1 + sqrt(d)) and adds the truncation
    correction to c1 of the Stokeslet, so the result is the untruncated mollified
    kernel for rho <= R - 1.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    w = mollifier.window
    k, wk = _k_panels(w, tol, width=panel_width)
    F = radial_symbol(kernel, dim, mollifier, k, truncated=True, R=R)
    cd = 1 / (2 * _PI) if dim == 2 else 1 / (2 * _PI**2)
    z = k[:, None] * rho[None, :]
    kw = (wk * F * k ** (dim - 1))[:, None]
    kk = (k * k)[:, None]
    if kernel == STOKESLET:
        g0, g1, g2 = (bessel_g(i, z, dim) for i in (0, 1, 2))
        c1 = cd * np.sum(kw * kk * (g0 - g1), 0) + corr_const(kernel, dim, R)
        c2 = cd * np.sum(kw * kk * kk * g2, 0)
        return c1, c2
    if kernel == STRESSLET:
        g2, g3 = bessel_g(2, z, dim), bessel_g(3, z, dim)
        c1 = cd * np.sum(kw * kk * kk * (-dim * g2 + z * z * g3), 0)
        c2 = -2 * cd * np.sum(kw * kk**3 * g3, 0)
        return c1, c2
    if kernel == ROTLET:
        g1 = bessel_g(1, z, dim)
        return 0.5 * cd * np.sum(kw * kk * g1, 0), 0 * rho
    raise ValueError(kernel)


def numeric_residual_pipeline(kernel, dim, window, R=None, tol=1e-13, rmax=1.0):
    """Residual numerator tables from the numeric Fourier pipeline.

    R is accepted for interface symmetry; the truncation radius is 1 + sqrt(d).
    Convergence is checked by repeating the quadrature with half-width panels.
    """
    if R is not None and abs(R - window_radius(dim)) > 1e-14:
        raise ValueError("truncation radius must be 1 + sqrt(d)")
    m = Mollifier.from_window(window)

    def nums(rho, width=1.0):
        return coeffs_to_numerators(kernel, dim, rho,
                                    *mollified_coeffs_numeric(kernel, dim, m, rho, tol, width))

    probe = np.linspace(0.0, rmax, 7)
    a = np.array(nums(probe))
    b = np.array(nums(probe, width=0.5))
    err = np.max(np.abs(a - b))
    if err > max(tol, 256 * np.finfo(float).eps) * max(1.0, np.max(np.abs(b))):
        raise PipelineError(f"radial quadrature not converged: {err:.3e}")
    names = _NUMERATORS[(kernel, dim)]
    out = {}
    for i, name in enumerate(names):
        out[name] = RadialTable.fit(lambda r, i=i: nums(r)[i], rmax, tol)
    return out


# ----------------------------------------------------------- tables

_NOISE = 64 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class RadialTable:
    """Chebyshev series on [0, rmax]."""

    coeffs: np.ndarray
    rmax: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return cheb.chebval(2 * r / self.rmax - 1, self.coeffs)

    @classmethod
    def fit(cls, f, rmax, tol, nmin=16, nmax=512):
        """Degree doubles until the trailing coefficients fall below tol/10 (relative).

        The threshold is floored at the roundoff level of the sampled function.
        """
        thresh = max(0.1 * tol, _NOISE)
        n = nmin
        while True:
            c = cheb.Chebyshev.interpolate(f, n, domain=[0.0, rmax]).coef
            scale = max(np.max(np.abs(c)), 1e-300)
            if np.max(np.abs(c[-4:])) < thresh * scale or n >= nmax:
                break
            n *= 2
        keep = np.nonzero(np.abs(c) > 0.1 * thresh * scale)[0]
        c = c[: keep[-1] + 1] if keep.size else c[:1]
        return cls(np.ascontiguousarray(c), float(rmax))


@dataclass(frozen=True, eq=False)
class SplitKernel:
    kernel: str
    dim: int
    mollifier: Mollifier
    radial_tables: dict
    self_const: float
    window_radius_R: float
    corr_const: float
    tol: float

    @property
    def window(self):
        return self.mollifier.window

    @property
    def numerator_tables(self):
        return [self.radial_tables[n] for n in _NUMERATORS[(self.kernel, self.dim)]]

    @property
    def rho_cut(self):
        return 1.0

    def residual_coeffs(self, r, nu=1.0):
        """Residual (c1, c2) at length scale nu; zero for r >= nu."""
        r = np.asarray(r, dtype=float)
        rho = r / nu
        inside = rho < self.rho_cut
        rs = np.where(inside, rho, 0.5)
        nums = [t(rs) for t in self.numerator_tables]
        c1, c2 = numerators_to_coeffs(self.kernel, self.dim, rs, *nums)
        # c1 multiplies a term of degree 0 (Stokeslet) or 1 in x, c2 a term of degree 2 or 3
        A = scale_exponent(self.kernel, self.dim)
        d1, d2 = {STOKESLET: (0, 2), STRESSLET: (1, 3), ROTLET: (1, 0)}[self.kernel]
        c1 = np.where(inside, c1 * nu ** (A - d1), 0.0)
        c2 = np.where(inside, c2 * nu ** (A - d2), 0.0)
        return c1, c2


def self_interaction(sk, nu=1.0):
    """Coefficient of rho_beta in u_self at length scale nu (diagonal tensor)."""
    if sk.kernel != STOKESLET:
        return 0.0
    if sk.dim == 3:
        return sk.self_const / nu
    return sk.self_const + np.log(nu) / (4 * _PI)


def build_split_kernel(kernel, dim, window, tol=1e-14):
    """Assemble tables and constants; 3D from closed forms, 2D from the pipeline."""
    if kernel not in STOKES_KERNELS:
        raise ValueError(f"no tables for kernel {kernel!r}")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    m = Mollifier.from_window(window)
    if dim == 3:
        names = _NUMERATORS[(kernel, 3)] + ("Phi", "B_R")
        tables = {n: RadialTable.fit(lambda r, n=n: residual_radial(window, n, r), 1.0, tol)
                  for n in names}
        selfc = -W.window_eval(window, 0.0) / (2 * _PI) if kernel == STOKESLET else 0.0
    else:
        tables = numeric_residual_pipeline(kernel, 2, window, tol=max(tol, 1e-14))
        selfc = -float(tables["S_moll_diag"](0.0)) if kernel == STOKESLET else 0.0
    return SplitKernel(kernel, dim, m, tables, float(selfc), window_radius(dim),
                       corr_const(kernel, dim), tol)


# --------------------------------------------- residual tensors (API level)

def _check_nonzero(r):
    if np.any(np.asarray(r) == 0):
        raise ValueError("residual kernel undefined at r = 0")


def stokeslet_residual(sk, x, nu=1.0):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    _check_nonzero(r)
    return coeff_tensor(STOKESLET, sk.dim, x, *sk.residual_coeffs(r, nu))


def stresslet_residual(sk, x, nu=1.0):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    _check_nonzero(r)
    return coeff_tensor(STRESSLET, sk.dim, x, *sk.residual_coeffs(r, nu))


def rotlet_residual(sk, x, nu=1.0):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    _check_nonzero(r)
    return coeff_tensor(ROTLET, sk.dim, x, *sk.residual_coeffs(r, nu))


def biharmonic_residual(sk, r):
    """B_R(r) in 3D (closed form)."""
    if sk.dim != 3:
        raise ValueError("closed-form B_R is three-dimensional")
    return _biharmonic_residual_3d(sk.window, np.asarray(r, dtype=float))


def biharmonic_residual_derivs(sk, r):
    """(B_R', B_R'', B_R''') = (-Phi/8pi, phi/4pi, phi'/4pi)."""
    w = sk.window
    r = np.asarray(r, dtype=float)
    d3 = w.deriv(r, 1)
    if w.kind == W.PROLATE:
        d3 = np.where(r <= 1.0, d3, 0.0)
    return (-W.phi_tail(w, r) / (8 * _PI), W.window_eval(w, r) / (4 * _PI), d3 / (4 * _PI))


# ------------------------------------------------- Fourier symbols

def symbol_apply(kernel, dim, kvec, F, f, n=None):
    """Polynomial part of the symbol times F(k), applied to strengths.

    kvec (..., d); F (...,); f (..., d) (or (...,) torque for the 2D rotlet).
    Returns complex (..., d).
    """
    kvec = np.asarray(kvec, dtype=float)
    F = np.asarray(F)[..., None]
    k2 = np.sum(kvec * kvec, -1, keepdims=True)
    if kernel == STOKESLET:
        return F * (k2 * f - kvec * np.sum(kvec * f, -1, keepdims=True))
    if kernel == STRESSLET:
        kf = np.sum(kvec * f, -1, keepdims=True)
        kn = np.sum(kvec * n, -1, keepdims=True)
        fn = np.sum(f * n, -1, keepdims=True)
        return 1j * F * (k2 * (f * kn + n * kf + kvec * fn) - 2 * kvec * kf * kn)
    if kernel == ROTLET:
        if dim == 3:
            return -0.5j * F * np.cross(f, kvec)
        t = np.asarray(f)[..., None]
        return -0.5j * F * t * np.stack([kvec[..., 1], -kvec[..., 0]], -1)
    raise ValueError(kernel)


def mollified_fourier_tensor(sk, kvec, truncated=True):
    """Full tensor symbol of the (truncated) mollified kernel at kvec (..., d)."""
    kvec = np.asarray(kvec, dtype=float)
    k = np.linalg.norm(kvec, axis=-1)
    if not truncated and np.any(k == 0):
        raise ValueError("untruncated mollified symbol is singular at k = 0")
    F = radial_symbol(sk.kernel, sk.dim, sk.mollifier, k, truncated)[..., None]
    d = sk.dim
    eye = np.eye(d)
    k2 = (k * k)[..., None]
    if sk.kernel == STOKESLET:
        return (F[..., None] * (k2[..., None] * eye - kvec[..., :, None] * kvec[..., None, :])).astype(complex)
    if sk.kernel == STRESSLET:
        kd = (eye[:, :, None] * kvec[..., None, None, :] + eye[None, :, :] * kvec[..., :, None, None]
              + eye[:, None, :] * kvec[..., None, :, None])
        kkk = kvec[..., :, None, None] * kvec[..., None, :, None] * kvec[..., None, None, :]
        return 1j * F[..., None, None] * (k2[..., None, None] * kd - 2 * kkk)
    if sk.kernel == ROTLET:
        if d == 3:
            return -0.5j * F[..., None] * np.einsum("jlm,...m->...jl", _levi_civita(), kvec)
        return -0.5j * F * np.stack([kvec[..., 1], -kvec[..., 0]], -1)
    raise ValueError(sk.kernel)


# --------------------------------------------------- table file format

_TAB_MAGIC = b"SDKT"
_TAB_VERSION = 1


def export_tables(sk, path):
    """Versioned little-endian binary dump of the radial tables."""
    w = sk.window
    kind_id = 0 if w.kind == W.PROLATE else 1
    param = w.c if w.kind == W.PROLATE else w.sigma
    with open(path, "wb") as fh:
        fh.write(_TAB_MAGIC)
        fh.write(struct.pack("<IIIIddddI", _TAB_VERSION, KERNEL_IDS[sk.kernel], sk.dim, kind_id,
                             param, sk.tol, sk.self_const, sk.corr_const, len(sk.radial_tables)))
        for name, t in sk.radial_tables.items():
            nb = name.encode("ascii")
            c = np.ascontiguousarray(t.coeffs, dtype="<f8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<dQ", t.rmax, c.size))
            fh.write(c.tobytes())


def import_tables(path, window=None):
    """Rebuild a SplitKernel from :func:`export_tables` output."""
    raw = Path(path).read_bytes()
    if raw[:4] != _TAB_MAGIC:
        raise ValueError(f"{path}: bad magic")
    head = "<IIIIddddI"
    ver, kid, dim, kind_id, param, tol, selfc, corr, ntab = struct.unpack_from(head, raw, 4)
    if ver != _TAB_VERSION:
        raise ValueError(f"{path}: unsupported version {ver}")
    off = 4 + struct.calcsize(head)
    tables = {}
    for _ in range(ntab):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + ln].decode("ascii")
        off += ln
        rmax, cnt = struct.unpack_from("<dQ", raw, off)
        off += 16
        c = np.frombuffer(raw, dtype="<f8", count=cnt, offset=off).astype(float)
        off += 8 * cnt
        tables[name] = RadialTable(c, rmax)
    if window is None:
        window = W.build_prolate(param) if kind_id == 0 else W.build_gaussian(param)
    return SplitKernel(KERNELS[kid], dim, Mollifier.from_window(window), tables, selfc,
                       window_radius(dim), corr, tol)
