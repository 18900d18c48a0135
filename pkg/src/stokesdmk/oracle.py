"""Reference evaluators: direct sums and a slow single-level Ewald sum."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _pairs
from . import split as S
from . import windows as W

KCODE = {S.STOKESLET: _pairs.K_STOKESLET, S.STRESSLET: _pairs.K_STRESSLET,
         S.ROTLET: _pairs.K_ROTLET}


class SingularConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Sources, targets and strengths in the unit box [-1/2, 1/2]^d.

    ``f`` is (N, d) forces/torques, or (N,) torques for the 2D rotlet; ``n`` holds
    stresslet orientations.  ``targets=None`` means the targets are the sources.
    """

    dim: int
    sources: np.ndarray
    f: np.ndarray
    n: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        for name in ("sources", "f", "n", "targets"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.ascontiguousarray(v, dtype=float))
        if self.sources.ndim != 2 or self.sources.shape[1] != self.dim:
            raise ValueError("sources must be (N, dim)")
        if self.f.shape[0] != self.sources.shape[0]:
            raise ValueError("strengths must have one row per source")
        if self.n is not None and self.n.shape != self.sources.shape:
            raise ValueError("orientations must be (N, dim)")
        for arr in (self.sources, self.targets):
            if arr is None:
                continue
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coordinates")
            if np.any(np.abs(arr) > 0.5):
                raise ValueError("points must lie in [-1/2, 1/2]^d")
        if not np.all(np.isfinite(self.f)) or (self.n is not None and not np.all(np.isfinite(self.n))):
            raise ValueError("non-finite strengths")

    @property
    def aliased(self):
        return self.targets is None

    @property
    def tgt(self):
        return self.sources if self.targets is None else self.targets

    def strengths(self, kernel):
        """(f, n) as 2-D float arrays in the layout used by the compiled loops."""
        f = self.f.reshape(len(self.f), -1)
        if kernel == S.STRESSLET:
            if self.n is None:
                raise ValueError("stresslet needs orientations n")
            nv = self.n
        else:
            nv = np.zeros((len(f), self.dim))
        want = 1 if (kernel == S.ROTLET and self.dim == 2) else self.dim
        if f.shape[1] != want:
            raise ValueError(f"{kernel} in {self.dim}D needs {want} strength components")
        return np.ascontiguousarray(f), np.ascontiguousarray(nv)

    def shifted(self, shift):
        """All points translated by ``shift`` with periodic wrap into the unit cell."""
        wrap = lambda p: (p + shift + 0.5) % 1.0 - 0.5
        return ParticleSystem(self.dim, wrap(self.sources), self.f, self.n,
                              None if self.targets is None else wrap(self.targets))


def _raise_singular(idx):
    if idx >= 0:
        raise SingularConfigurationError(f"target {idx} coincides with a distinct source")


def direct_sum(kernel, sys):
    """O(NM) sum of the exact kernel, omitting the self term when targets alias sources."""
    f, nv = sys.strengths(kernel)
    out = np.zeros((len(sys.tgt), sys.dim))
    _raise_singular(_pairs.direct_sum(KCODE[kernel], sys.dim, sys.tgt, sys.sources, f, nv,
                                      sys.aliased, out))
    return out


def image_shifts(dim, periodic):
    if not periodic:
        return np.zeros((1, dim))
    sh = [s for s in itertools.product((-1, 0, 1), repeat=dim)]
    sh.sort(key=lambda s: sum(abs(v) for v in s))  # zero shift first
    return np.array(sh, dtype=float)


def _numerator_arrays(sk):
    tabs = sk.numerator_tables
    n1 = np.ascontiguousarray(tabs[0].coeffs)
    n2 = np.ascontiguousarray(tabs[1].coeffs) if len(tabs) > 1 else np.zeros(1)
    return n1, n2


def direct_residual_sum(sk, sys, cutoff=1.0, periodic=False):
    """Residual-kernel sum at length scale ``cutoff`` (the residual vanishes beyond it)."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    f, nv = sys.strengths(sk.kernel)
    out = np.zeros((len(sys.tgt), sys.dim))
    n1, n2 = _numerator_arrays(sk)
    A = S.scale_exponent(sk.kernel, sk.dim)
    idx = _pairs.residual_all_pairs(KCODE[sk.kernel], sys.dim, sys.tgt, sys.sources, f, nv,
                                    sys.aliased, float(cutoff), float(A),
                                    image_shifts(sys.dim, periodic), n1, n2, out)
    _raise_singular(idx)
    return out


# ------------------------------------------------------------ Ewald

@dataclass(frozen=True)
class FourierGrid:
    """Either a trapezoidal grid (spacing h, |m| <= M) or periodic modes 2 pi kappa."""

    kind: str  # "free" | "periodic"
    h: float
    M: int


def default_grid(sk, mode, tol=1e-16):
    w = sk.window
    kmax = w.c if w.kind == W.PROLATE else 2.0 * np.sqrt(-np.log(tol)) / w.sigma
    if mode == "periodic":
        return FourierGrid("periodic", 2 * np.pi, int(np.ceil(kmax / (2 * np.pi))))
    # period must exceed R + 1 (support of the truncated mollified kernel) + sqrt(d)
    P = 1.2 * (sk.window_radius_R + 1.0 + np.sqrt(sk.dim))
    h = 2 * np.pi / P
    return FourierGrid("free", h, int(np.ceil(kmax / h)))


def _modes(dim, grid):
    g = grid.h * np.arange(-grid.M, grid.M + 1)
    for g0 in g:
        slab = np.stack(np.meshgrid(*([np.array([g0])] + [g] * (dim - 1)), indexing="ij"),
                        -1).reshape(-1, dim)
        yield slab


def fourier_far_field(sk, sys, grid, chunk=4096):
    """Mollified far field by a direct (non-uniform) discrete Fourier sum."""
    dim = sys.dim
    f, nv = sys.strengths(sk.kernel)
    fv = f[:, 0] if (sk.kernel == S.ROTLET and dim == 2) else f
    src, tgt = sys.sources, sys.tgt
    out = np.zeros((len(tgt), dim))
    truncated = grid.kind == "free"
    for slab in _modes(dim, grid):
        k = np.linalg.norm(slab, axis=1)
        if not truncated:
            slab = slab[k > 0]
            k = k[k > 0]
        if not len(k):
            continue
        F = S.radial_symbol(sk.kernel, dim, sk.mollifier, k, truncated=truncated)
        keep = F != 0
        slab, F = slab[keep], F[keep]
        for a in range(0, len(F), chunk):
            kv, Fc = slab[a:a + chunk], F[a:a + chunk]
            es = np.exp(-1j * src @ kv.T)  # (N, K)
            if sk.kernel == S.STRESSLET:
                # contract before the transform is not possible for the kk^T part; transform f n^T
                q = np.einsum("nk,na,nb->kab", es, f, nv)
                kq = np.einsum("kab,kb->ka", q, kv)          # Q k
                qk = np.einsum("kab,ka->kb", q, kv)          # Q^T k
                tr = np.einsum("kaa->k", q)[:, None]
                kqk = np.einsum("ka,ka->k", kv, kq)[:, None]
                k2 = np.sum(kv * kv, 1)[:, None]
                V = 1j * Fc[:, None] * (k2 * (kq + qk + kv * tr) - 2 * kv * kqk)
            else:
                rho = es.T @ fv
                V = S.symbol_apply(sk.kernel, dim, kv, Fc, rho)
            out += (np.exp(1j * tgt @ kv.T) @ V).real
    if truncated:
        out *= (grid.h / (2 * np.pi)) ** dim
    return out


def stresslet_zero_mode(sys):
    """u0(x_b) = -sum_a (x_b - x_a)(f_a . n_a)."""
    fn = np.sum(sys.f * sys.n, axis=1)
    return -(sys.tgt * fn.sum() - (fn[:, None] * sys.sources).sum(0))


def ewald_reference(sk, sys, mode="free", grid=None):
    """Single-level split sum u = u_local + u_far + u_self (+ u0 for the periodic stresslet)."""
    if mode not in ("free", "periodic"):
        raise ValueError(mode)
    if mode == "periodic" and sys.dim == 2 and sk.kernel == S.STRESSLET:
        raise NotImplementedError("2D periodic stresslet is not supported")
    grid = grid or default_grid(sk, mode)
    if (grid.kind == "periodic") != (mode == "periodic"):
        raise ValueError("grid kind does not match mode")
    if mode == "free":
        span = 2 * np.pi / grid.h
        need = sk.window_radius_R + 1.0 + np.sqrt(sys.dim)
        if span < need:
            raise ValueError(f"grid period {span:.3f} < {need:.3f}: aliased quadrature")
    u = direct_residual_sum(sk, sys, 1.0, periodic=(mode == "periodic"))
    u += fourier_far_field(sk, sys, grid)
    f, _ = sys.strengths(sk.kernel)
    if mode == "free" and sk.kernel == S.STOKESLET:
        u += sk.corr_const * f.sum(0)
    if sys.aliased:
        u += S.self_interaction(sk) * f
    if mode == "periodic" and sk.kernel == S.STRESSLET:
        u += stresslet_zero_mode(sys)
    return u


def rel_l2(u, ref):
    den = np.linalg.norm(ref)
    return float(np.linalg.norm(u - ref) / (den if den > 0 else 1.0))
