"""Window functions: prolate spheroidal (order zero) and Gaussian screens.

A window phi is even, integrates to one and is (numerically) supported on
[-1, 1].  Its Fourier transform uses the convention
``phi_hat(k) = int phi(x) exp(-i k x) dx``.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as leg
from scipy.linalg import eigh_tridiagonal
from scipy.special import erfc

PROLATE = "prolate"
GAUSSIAN = "gaussian"

CACHE_ENV = "STOKESDMK_CACHE"
_CACHE_MAGIC = b"PSWF"
_CACHE_VERSION = 1


class EigenSolveError(RuntimeError):
    def __init__(self, c, msg):
        super().__init__(f"prolate eigen-solve failed for c={c!r}: {msg}")
        self.c = c


@dataclass(frozen=True, eq=False)
class WindowFunction:
    """Even, unit-mass screen.

    For the prolate window ``legendre_coeffs`` holds psi_0^c on [-1, 1] in the
    standard Legendre basis, scaled so the series integrates to one (so
    ``norm_r`` is 1 for the stored coefficients).
    """

    kind: str
    c: float = 0.0
    sigma: float = 0.0
    legendre_coeffs: np.ndarray = field(default=None, repr=False)
    lambda0: float = 0.0
    norm_r: float = 1.0
    trunc_error: float = 0.0
    # derived series (prolate only)
    _d: tuple = field(default=(), repr=False)
    _anti: np.ndarray = field(default=None, repr=False)
    _anti1: np.ndarray = field(default=None, repr=False)
    _psi0: float = 1.0

    @property
    def kmax(self):
        """Practical Fourier bandlimit K_max (c, or 2/sigma^2)."""
        return self.c if self.kind == PROLATE else 2.0 / self.sigma**2

    @property
    def descriptor(self):
        return (self.kind, self.c if self.kind == PROLATE else self.sigma)

    def __call__(self, r):
        return window_eval(self, r)

    def deriv(self, r, order=1):
        """Real-space derivative d^n phi/dr^n (n = 1, 2, 3)."""
        r = np.asarray(r, dtype=float)
        if self.kind == GAUSSIAN:
            s2 = self.sigma**2
            g = np.exp(-r * r / s2) / (self.sigma * np.sqrt(np.pi))
            if order == 1:
                return -2 * r / s2 * g
            if order == 2:
                return (4 * r * r / s2**2 - 2 / s2) * g
            if order == 3:
                return (-8 * r**3 / s2**3 + 12 * r / s2**2) * g
            raise ValueError("order must be 1, 2 or 3")
        out = leg.legval(r, self._d[order - 1])
        return np.where(np.abs(r) <= 1.0, out, 0.0)


def _prolate_coeffs(c, size=None):
    # even Legendre modes only; normalized basis sqrt(n+1/2) P_n
    m = int(np.ceil(2 * c)) + 60 if size is None else size
    n = np.arange(0, 2 * m, 2, dtype=float)
    diag = n * (n + 1) + c * c * (2 * n * (n + 1) - 1) / ((2 * n + 3) * (2 * n - 1))
    n0 = n[:-1]
    off = c * c * (n0 + 1) * (n0 + 2) / ((2 * n0 + 3) * np.sqrt((2 * n0 + 1) * (2 * n0 + 5)))
    try:
        w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    except np.linalg.LinAlgError as exc:
        raise EigenSolveError(c, str(exc)) from exc
    beta = v[:, 0]
    if not np.all(np.isfinite(beta)):
        raise EigenSolveError(c, "non-finite eigenvector")
    a = np.zeros(2 * m)
    a[0::2] = beta * np.sqrt(n + 0.5)
    big = np.abs(a).max()
    keep = np.nonzero(np.abs(a) > 1e-16 * big)[0]
    a = a[: keep[-1] + 1]
    if keep[-1] >= 2 * m - 4:
        raise EigenSolveError(c, "expansion did not decay within the basis")
    if leg.legval(0.0, a) < 0:
        a = -a
    return a


def _cache_path(c, tol):
    d = os.environ.get(CACHE_ENV)
    if not d:
        return None
    return Path(d) / f"pswf_{float(c).hex()}_{float(tol).hex()}.bin"


def save_coeffs(path, c, coeffs):
    """Write Legendre coefficients: magic, version, c, count, then f64 data (LE)."""
    coeffs = np.ascontiguousarray(coeffs, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IdQ", _CACHE_VERSION, float(c), coeffs.size))
        fh.write(coeffs.tobytes())


def load_coeffs(path):
    """Inverse of :func:`save_coeffs`; returns ``(c, coeffs)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic")
    ver, c, count = struct.unpack_from("<IdQ", raw, 4)
    if ver != _CACHE_VERSION:
        raise ValueError(f"{path}: unsupported version {ver}")
    off = 4 + struct.calcsize("<IdQ")
    coeffs = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(float)
    return c, coeffs


def build_prolate(c, tol=1e-16):
    """Prolate window with bandlimit ``c``.

    psi_0^c is the lowest eigenvector of the prolate differential operator in
    the even Legendre basis (symmetric tridiagonal, bisection + inverse
    iteration).  The result is normalized so that phi_hat(0) = 1.
    """
    c = float(c)
    if not (c > 0 and np.isfinite(c)):
        raise ValueError("c must be positive")
    a = None
    path = _cache_path(c, tol)
    if path is not None and path.exists():
        try:
            c_file, a = load_coeffs(path)
            if c_file != c:
                a = None
        except (ValueError, OSError):
            a = None
    if a is None:
        a = _prolate_coeffs(c)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_coeffs(path, c, a)
    integral = 2.0 * a[0]  # int_{-1}^1 P_0 = 2, higher P_n integrate to 0
    psi0 = leg.legval(0.0, a)
    lam = integral / psi0
    norm = 1.0 / integral
    a = a * norm
    d1 = leg.legder(a, 1)
    d2 = leg.legder(a, 2)
    d3 = leg.legder(a, 3)
    anti = leg.legint(a, lbnd=0.0)
    anti1 = leg.legint(leg.legmulx(a), lbnd=0.0)
    phi0 = leg.legval(0.0, a)
    trunc = abs(leg.legval(1.0, a) / phi0)
    return WindowFunction(
        kind=PROLATE, c=c, legendre_coeffs=a, lambda0=lam, norm_r=norm,
        trunc_error=trunc, _d=(d1, d2, d3), _anti=anti, _anti1=anti1, _psi0=phi0,
    )


def build_gaussian(sigma):
    """Gaussian window phi(r) = exp(-r^2/sigma^2)/(sigma sqrt(pi))."""
    sigma = float(sigma)
    if not (sigma > 0 and np.isfinite(sigma)):
        raise ValueError("sigma must be positive")
    return WindowFunction(
        kind=GAUSSIAN, sigma=sigma, norm_r=1.0 / (sigma * np.sqrt(np.pi)),
        trunc_error=float(np.exp(-1.0 / sigma**2)),
    )


def window_eval(w, r):
    """phi(r); the prolate window is exactly zero for |r| > 1."""
    r = np.asarray(r, dtype=float)
    if w.kind == GAUSSIAN:
        return np.exp(-r * r / w.sigma**2) * w.norm_r
    out = leg.legval(np.clip(r, -1.0, 1.0), w.legendre_coeffs)
    return np.where(np.abs(r) <= 1.0, out, 0.0)


def window_fourier(w, k):
    """phi_hat(k), with phi_hat(0) = 1."""
    k = np.asarray(k, dtype=float)
    if w.kind == GAUSSIAN:
        return np.exp(-k * k * w.sigma**2 / 4)
    x = k / w.c
    out = leg.legval(np.clip(x, -1.0, 1.0), w.legendre_coeffs) / w._psi0
    return np.where(np.abs(x) <= 1.0, out, 0.0)


def window_fourier_deriv(w, k, order):
    """d^n phi_hat / dk^n for n = 1, 2, 3."""
    k = np.asarray(k, dtype=float)
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if w.kind == GAUSSIAN:
        s = w.sigma**2 / 4
        g = np.exp(-s * k * k)
        if order == 1:
            return -2 * s * k * g
        if order == 2:
            return (4 * s * s * k * k - 2 * s) * g
        return (-8 * s**3 * k**3 + 12 * s * s * k) * g
    x = k / w.c
    out = leg.legval(np.clip(x, -1.0, 1.0), w._d[order - 1]) / (w._psi0 * w.c**order)
    return np.where(np.abs(x) <= 1.0, out, 0.0)


def phi_tail(w, r):
    """Phi(r) = 2 int_r^inf phi(t) dt for r >= 0."""
    r = np.asarray(r, dtype=float)
    if w.kind == GAUSSIAN:
        return erfc(r / w.sigma)
    rc = np.clip(r, 0.0, 1.0)
    out = 2.0 * (leg.legval(1.0, w._anti) - leg.legval(rc, w._anti))
    return np.where(r < 1.0, out, 0.0)


def phi_moment(w, r, order):
    """int_0^r s^order phi(s) ds (order 0 or 1); r = inf allowed for the Gaussian."""
    r = np.asarray(r, dtype=float)
    if w.kind == GAUSSIAN:
        if order == 0:
            return 0.5 * (1.0 - erfc(r / w.sigma))
        if order == 1:
            return w.sigma / (2 * np.sqrt(np.pi)) * (1.0 - np.exp(-r * r / w.sigma**2))
        raise ValueError("order must be 0 or 1")
    rc = np.clip(r, 0.0, 1.0)
    if order == 0:
        return leg.legval(rc, w._anti)
    if order == 1:
        return leg.legval(rc, w._anti1)
    raise ValueError("order must be 0 or 1")
