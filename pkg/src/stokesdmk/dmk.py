"""Dual-space multilevel kernel-splitting evaluator for Stokes kernels.

The mollified kernel at the root scale is handled in Fourier space on the whole
box; each level l adds the difference kernel D_l = M_{l+1} - M_l between
colleague boxes through a fixed 3-periodic Fourier grid; what is left is a
compactly supported residual summed directly between adjacent leaves.
"""
from __future__ import annotations

import functools
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import _interp, _pairs
from . import oracle as O
from . import split as S
from . import tree as T
from . import windows as W

MODES = ("free", "periodic")
EPS_MIN, EPS_MAX = 1e-13, 1e-2

# rows: eps -> (3c/pi, p) for the prolate window, (6/(pi sigma^2), p) for the Gaussian
_EPS = (1e-3, 1e-6, 1e-9, 1e-12)
_TABLE = {
    S.STOKESLET: {W.PROLATE: ((10, 12), (17, 23), (25, 33), (31, 44)),
                  W.GAUSSIAN: ((14, 14), (25, 28), (38, 43), (50, 58))},
    S.STRESSLET: {W.PROLATE: ((9, 11), (17, 22), (25, 33), (32, 44)),
                  W.GAUSSIAN: ((11, 12), (26, 28), (40, 44), (54, 60))},
    S.ROTLET: {W.PROLATE: ((7, 8), (14, 18), (20, 28), (27, 39)),
               W.GAUSSIAN: ((9, 9), (21, 23), (34, 38), (47, 53))},
}
# the rows above come from 3D sweeps; in 2D the same protocol (N=2000, zero-mean
# strengths) needs a little more for the stresslet and rotlet
_TABLE_2D = {
    S.STOKESLET: _TABLE[S.STOKESLET],
    S.STRESSLET: {W.PROLATE: ((11, 13), (18, 24), (25, 35), (32, 46)),
                  W.GAUSSIAN: ((14, 16), (28, 31), (41, 47), (55, 62))},
    S.ROTLET: {W.PROLATE: ((8, 10), (14, 20), (21, 30), (27, 40)),
               W.GAUSSIAN: ((11, 12), (23, 26), (35, 40), (48, 55))},
}
_NS = {2: (120, 240, 360, 480), 3: (600, 1200, 2000, 3000)}

# Fourier arrays of one level are streamed in batches below this size (bytes)
BATCH_BYTES = 400 * 2**20


@dataclass(frozen=True)
class DmkPlan:
    kernel: str
    dim: int
    mode: str
    window_kind: str
    eps: float
    n3: int  # 3 K_max / pi; the level grid has N1 = 2 n3 - 1 points per axis
    p: int
    n_s: int

    @property
    def kmax(self):
        return self.n3 * np.pi / 3

    @property
    def c(self):
        return self.kmax if self.window_kind == W.PROLATE else None

    @property
    def sigma(self):
        return np.sqrt(2.0 / self.kmax) if self.window_kind == W.GAUSSIAN else None

    @property
    def N1(self):
        return 2 * self.n3 - 1

    @property
    def N_per(self):
        return 2 * int(np.floor(self.kmax / (2 * np.pi))) + 1

    @property
    def n_charge(self):
        if self.kernel == S.STRESSLET:
            return self.dim * self.dim
        return 1 if (self.kernel == S.ROTLET and self.dim == 2) else self.dim

    def window(self):
        return _window(self.window_kind, self.n3)

    @property
    def table_tol(self):
        # residual tables only need to beat eps by a safe margin
        return float(min(1e-6, max(1e-14, 1e-2 * self.eps)))

    def split_kernel(self):
        return _split_kernel(self.kernel, self.dim, self.window_kind, self.n3, self.table_tol)

    def describe(self):
        return {"kernel": self.kernel, "dim": self.dim, "mode": self.mode,
                "window": self.window_kind, "eps": self.eps, "c": self.c, "sigma": self.sigma,
                "p": self.p, "N1": self.N1, "N_per": self.N_per, "n_s": self.n_s}


@functools.lru_cache(maxsize=None)
def _window(kind, n3):
    K = n3 * np.pi / 3
    return W.build_prolate(K) if kind == W.PROLATE else W.build_gaussian(np.sqrt(2.0 / K))


@functools.lru_cache(maxsize=None)
def _split_kernel(kernel, dim, kind, n3, tol):
    return S.build_split_kernel(kernel, dim, _window(kind, n3), tol=tol)


def _fit(x, y, x0):
    a, b = np.polyfit(x, y, 1)
    return a * x0 + b


def select_parameters(kernel, eps, window="prolate", dim=3, mode="free", n3=None, p=None,
                      n_s=None):
    """Plan from the tuned table; other eps use straight-line fits through its rows.

    ``n3``, ``p`` and ``n_s`` override the table (used by parameter sweeps).
    """
    if kernel not in S.STOKES_KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if window not in (W.PROLATE, W.GAUSSIAN):
        raise ValueError(f"unknown window {window!r}")
    if dim not in (2, 3) or mode not in MODES:
        raise ValueError("dim must be 2 or 3 and mode free or periodic")
    if mode == "periodic" and dim == 2 and kernel == S.STRESSLET:
        raise NotImplementedError("2D periodic stresslet is not supported")
    if not EPS_MIN <= eps <= EPS_MAX:
        raise ValueError(f"eps must lie in [{EPS_MIN:g}, {EPS_MAX:g}]")
    rows = np.array((_TABLE if dim == 3 else _TABLE_2D)[kernel][window], dtype=float)
    le = np.log10(eps)
    x = np.log10(_EPS)
    hit = np.nonzero(np.isclose(x, le, atol=1e-9))[0]
    if hit.size:
        i = hit[0]
        t_n3, t_p, t_ns = int(rows[i, 0]), int(rows[i, 1]), _NS[dim][i]
    else:
        t_n3 = max(2, int(np.ceil(_fit(x, rows[:, 0], le) - 1e-9)))
        t_p = max(4, int(np.ceil(_fit(rows[:, 0], rows[:, 1], t_n3) - 1e-9)))
        t_ns = max(8, int(round(_fit(x, _NS[dim], le))))
    return DmkPlan(kernel, dim, mode, window, float(eps), int(n3 or t_n3), int(p or t_p),
                   int(n_s or t_ns))


# ------------------------------------------------------------ operators

def _charges(kernel, dim, f, nv):
    if kernel == S.STRESSLET:
        return np.einsum("na,nb->nab", f, nv).reshape(len(f), dim * dim)
    return f


def _contract(kernel, dim, kv, qh):
    """Polynomial part of the symbol applied to transformed charges qh (..., q)."""
    if kernel != S.STRESSLET:
        F = np.ones(kv.shape[:-1])
        return S.symbol_apply(kernel, dim, kv, F, qh[..., 0] if qh.shape[-1] == 1 else qh)
    Q = qh.reshape(qh.shape[:-1] + (dim, dim))
    kq = np.einsum("...ab,...b->...a", Q, kv)
    qk = np.einsum("...ab,...a->...b", Q, kv)
    tr = np.einsum("...aa->...", Q)[..., None]
    kqk = np.sum(kv * kq, -1, keepdims=True)
    k2 = np.sum(kv * kv, -1, keepdims=True)
    return 1j * (k2 * (kq + qk + kv * tr) - 2 * kv * kqk)


def _fwd(E, q, dim):
    """sum_j E[m, j] (tensor) q[j]: (nb, p^d, q) -> (nb, M^d, q) complex."""
    nb, _, nq = q.shape
    p = E.shape[1]
    if dim == 3:
        x = q.reshape(nb, p, p, p, nq)
        return np.einsum("ai,bj,ck,nijkq->nabcq", E, E, E, x, optimize=True).reshape(nb, -1, nq)
    x = q.reshape(nb, p, p, nq)
    return np.einsum("ai,bj,nijq->nabq", E, E, x, optimize=True).reshape(nb, -1, nq)


def _inv(E, V, dim):
    """Real part of sum_m conj(E[m, i]) V[m]: (nb, M^d, d) -> (nb, p^d, d)."""
    nb, _, nd = V.shape
    M = E.shape[0]
    Ec = E.conj()
    if dim == 3:
        x = V.reshape(nb, M, M, M, nd)
        out = np.einsum("ai,bj,ck,nabcq->nijkq", Ec, Ec, Ec, x, optimize=True)
    else:
        x = V.reshape(nb, M, M, nd)
        out = np.einsum("ai,bj,nabq->nijq", Ec, Ec, x, optimize=True)
    return np.ascontiguousarray(out.real.reshape(nb, -1, nd))


def _child_mats(t, w):
    # A[sigma][i, j] = L_i(child node j) in parent units
    return [_interp.lagrange_matrix(t, w, (s - 0.5) / 2 + t / 2) for s in (0, 1)]


def _grid(dim, g):
    return np.stack(np.meshgrid(*([g] * dim), indexing="ij"), -1).reshape(-1, dim)


def _level_symbol(plan, sk, k):
    """G(k') on the scale-free level grid: (gamma_hat(k/2) - gamma_hat(k)) / k^4."""
    k = np.asarray(k, dtype=float)
    m = sk.mollifier
    small = k < 0.5
    ks = np.where(small, 1.0, k)
    if plan.kernel == S.ROTLET:
        a = S.window_taylor(sk.window, 12)
        n = np.arange(1, a.size)
        ser = np.sum(a[1:] * (4.0 ** -n - 1) * k[..., None] ** (2 * n - 2), -1)
        big = (W.window_fourier(sk.window, ks / 2) - W.window_fourier(sk.window, ks)) / ks**2
    else:
        g = _gamma_taylor(m, 12)
        n = np.arange(2, g.size)
        ser = np.sum(g[2:] * (4.0 ** -n - 1) * k[..., None] ** (2 * n - 4), -1)
        big = (m.fourier(ks / 2) - m.fourier(ks)) / ks**4
    return np.where(small, ser, big)


def _gamma_taylor(m, nterms):
    if m.taylor is not None and m.taylor.size >= nterms:
        return m.taylor
    a = S.window_taylor(m.window, nterms)
    return a * (1 - np.arange(a.size))


@dataclass(eq=False)
class _Ops:
    plan: DmkPlan
    sk: S.SplitKernel
    t: np.ndarray
    w: np.ndarray
    child: list
    E: np.ndarray  # level grid (N1, p)
    kgrid: np.ndarray = field(repr=False)  # (N1^d, d)
    G: np.ndarray = field(repr=False)  # (N1^d,)
    phases: dict = field(repr=False)  # offset tuple -> (N1^d,) complex


def _build_ops(plan, sk):
    t, w = _interp.cheb_nodes(plan.p)
    m = np.arange(plan.N1) - (plan.N1 - 1) // 2
    g = 2 * np.pi / 3 * m
    E = np.exp(-1j * np.outer(g, t))
    kg = _grid(plan.dim, g)
    G = _level_symbol(plan, sk, np.linalg.norm(kg, axis=1))
    ph1 = {s: np.exp(-1j * g * s) for s in (-1, 0, 1)}
    phases = {}
    for s in itertools.product((-1, 0, 1), repeat=plan.dim):
        arr = ph1[s[0]]
        for a in s[1:]:
            arr = np.multiply.outer(arr, ph1[a])
        phases[s] = arr.ravel()
    return _Ops(plan, sk, t, w, _child_mats(t, w), E, kg, G, phases)


# ------------------------------------------------------------ passes

def _centers(tree, ids):
    side = 2.0 ** -tree.level[ids].astype(float)
    return (tree.coords[ids] + 0.5) * side[:, None] - 0.5, side


def upward_pass(tree, ops, chg):
    """Outgoing proxy charges for every box with sources: dict box -> (p^d, q)."""
    plan = ops.plan
    pd = plan.p**plan.dim
    out = {}
    leaves = np.array([b for b in tree.leaves() if tree.src_hi[b] > tree.src_lo[b]],
                      dtype=np.int64)
    if len(leaves):
        cen, side = _centers(tree, leaves)
        acc = np.zeros((len(leaves), pd, chg.shape[1]))
        _interp.anterpolate(plan.dim, ops.t, ops.w, tree.sources, chg, tree.src_lo,
                            tree.src_hi, cen, side, leaves, acc)
        out.update(zip(leaves.tolist(), acc))
    for ids in reversed(tree.levels()[:-1]):
        for b in ids:
            if tree.children[b, 0] < 0 or tree.src_hi[b] == tree.src_lo[b]:
                continue
            tot = None
            for ch in tree.children[b]:
                q = out.get(int(ch))
                if q is None:
                    continue
                y = _child_apply(ops, tree.coords[ch] & 1, q[None], plan.dim, up=True)[0]
                tot = y if tot is None else tot + y
            out[int(b)] = tot
    return out


def _child_apply(ops, sig, x, dim, up):
    # sig[a] in {0, 1} selects the lower or upper half along axis a
    mats = [ops.child[s] for s in sig]
    nb, _, nq = x.shape
    p = ops.plan.p
    y = x.reshape((nb,) + (p,) * dim + (nq,))
    for a, A in enumerate(mats):
        M = A if up else A.T
        y = np.moveaxis(np.tensordot(M, y, axes=(1, a + 1)), 0, a + 1)
    return y.reshape(nb, -1, nq)


def _root_far_field(tree, ops, outgoing, sum_f):
    """Root-scale mollified field at the root proxies (p^d, d)."""
    plan, sk = ops.plan, ops.sk
    d = plan.dim
    q0 = outgoing.get(0)
    if q0 is None:
        return np.zeros((plan.p**d, d))
    if plan.mode == "free":
        P = 1.05 * (sk.window_radius_R + 2.0)
        h = 2 * np.pi / P
        M = int(np.ceil(plan.kmax / h))
        g = h * np.arange(-M, M + 1)
        weight = (h / (2 * np.pi)) ** d
    else:
        M = (plan.N_per - 1) // 2
        g = 2 * np.pi * np.arange(-M, M + 1)
        weight = 1.0
    E = np.exp(-1j * np.outer(g, ops.t))
    kv = _grid(d, g)
    k = np.linalg.norm(kv, axis=1)
    F = np.zeros_like(k)
    nz = k > 0
    F[nz] = S.radial_symbol(plan.kernel, d, sk.mollifier, k[nz], truncated=(plan.mode == "free"))
    if plan.mode == "free":
        F[~nz] = S.radial_symbol(plan.kernel, d, sk.mollifier, k[~nz], truncated=True)
    qh = _fwd(E, q0[None], d)[0]
    V = _contract(plan.kernel, d, kv, qh) * F[:, None]
    u = _inv(E, V[None], d)[0] * weight
    if plan.mode == "free" and plan.kernel == S.STOKESLET:
        u += sk.corr_const * sum_f
    return u


def downward_pass(tree, ops, outgoing, root_field):
    """Incoming proxy potentials for every box with targets: dict box -> (p^d, d)."""
    plan = ops.plan
    d = plan.dim
    A = S.scale_exponent(plan.kernel, d)
    offs = list(itertools.product((-1, 0, 1), repeat=d))
    inc = {0: root_field.copy()} if tree.tgt_hi[0] > tree.tgt_lo[0] else {}
    leaf = tree.is_leaf
    per_box = ops.G.size * d * 16 + ops.G.size * plan.n_charge * 16
    for lev, ids in enumerate(tree.levels()):
        # parent -> child interpolation
        if lev > 0:
            for b in ids:
                b = int(b)
                if tree.tgt_hi[b] == tree.tgt_lo[b]:
                    continue
                par = int(tree.parent[b])
                inc[b] = _child_apply(ops, tree.coords[b] & 1, inc[par][None], d, up=False)[0]
        # leaf-leaf colleague pairs are left entirely to the residual at scale r_l
        tgt_boxes = [int(b) for b in ids if tree.tgt_hi[b] > tree.tgt_lo[b]
                     and not (leaf[b] and all(c < 0 or leaf[c] or int(c) not in outgoing
                                              for c in tree.coll_id[b]))]
        if not tgt_boxes:
            continue
        scale = (2.0 ** -lev) ** A / 3.0**d
        Gs = ops.G * scale
        batch = max(1, int(BATCH_BYTES // per_box))
        cache = {}
        for i0 in range(0, len(tgt_boxes), batch):
            chunk = tgt_boxes[i0:i0 + batch]
            need = set()
            for b in chunk:
                for c in tree.coll_id[b]:
                    if c >= 0 and int(c) in outgoing and not (leaf[b] and leaf[c]):
                        need.add(int(c))
            cache = {c: v for c, v in cache.items() if c in need}
            todo = [c for c in need if c not in cache]
            for j0 in range(0, len(todo), batch):
                part = todo[j0:j0 + batch]
                qh = _fwd(ops.E, np.stack([outgoing[c] for c in part]), d)
                V = _contract(plan.kernel, d, ops.kgrid[None], qh)
                cache.update(zip(part, V))
            W_ = np.zeros((len(chunk), ops.G.size, d), dtype=complex)
            for i, b in enumerate(chunk):
                for s, c in zip(offs, tree.coll_id[b]):
                    c = int(c)
                    if c >= 0 and c in cache and not (leaf[b] and leaf[c]):
                        W_[i] += ops.phases[s][:, None] * cache[c]
            W_ *= Gs[None, :, None]
            u = _inv(ops.E, W_, d)
            for i, b in enumerate(chunk):
                inc[b] = inc[b] + u[i]
    return inc


def _residual_csr(tree):
    lists = T.residual_lists(tree)
    leaves = sorted(b for b in lists if tree.tgt_hi[b] > tree.tgt_lo[b])
    shifts = O.image_shifts(tree.dim, tree.periodic)
    skey = {tuple(int(v) for v in s): i for i, s in enumerate(shifts)}
    ptr, src, sh, nu = [0], [], [], []
    for b in leaves:
        for c, s in lists[b]:
            if tree.src_hi[c] == tree.src_lo[c]:
                continue
            src.append(c)
            sh.append(skey[tuple(s)])
            nu.append(2.0 ** -max(tree.level[b], tree.level[c]))
        ptr.append(len(src))
    leaves = np.array(leaves, dtype=np.int64)
    return (leaves, np.array(ptr, dtype=np.int64), np.array(src, dtype=np.int64),
            np.array(sh, dtype=np.int64), np.array(nu, dtype=float), shifts)


def _mirror_owner(leaves, ptr, src, sh, shifts):
    """Ownership flags for the symmetric pass, or None if the lists are not symmetric."""
    tgt = np.repeat(leaves, np.diff(ptr))
    neg = {tuple(v): i for i, v in enumerate(-shifts)}
    msh = np.array([neg[tuple(v)] for v in shifts], dtype=np.int64)[sh]
    key = set(zip(tgt.tolist(), src.tolist(), sh.tolist()))
    if any(m not in key for m in zip(src.tolist(), tgt.tolist(), msh.tolist())):
        return None
    # own (b, c, s) if (b, c, s) <= its mirror (c, b, -s)
    return (tgt < src) | ((tgt == src) & (sh <= msh))


def residual_pass(tree, plan, sk, f, nv, aliased, out):
    leaves, ptr, src, sh, nu, shifts = _residual_csr(tree)
    n1, n2 = O._numerator_arrays(sk)
    kc = O.KCODE[plan.kernel]
    A = float(S.scale_exponent(plan.kernel, plan.dim))
    own = _mirror_owner(leaves, ptr, src, sh, shifts) if aliased else None
    if own is not None:
        idx = _pairs.residual_leaves_sym(kc, plan.dim, tree.sources, f, nv, tree.src_lo,
                                         tree.src_hi, leaves, ptr, src, sh, nu, own, shifts,
                                         A, n1, n2, out)
    else:
        idx = _pairs.residual_leaves(
            kc, plan.dim, tree.targets, tree.sources, f, nv, tree.tgt_perm, tree.src_perm,
            aliased, tree.tgt_lo[leaves], tree.tgt_hi[leaves], tree.src_lo, tree.src_hi,
            ptr, src, sh, nu, shifts, A, n1, n2, out)
    if idx >= 0:
        raise O.SingularConfigurationError(
            f"target {int(tree.tgt_perm[idx])} coincides with a distinct source")


# ------------------------------------------------------------ driver

@dataclass
class DmkResult:
    u: np.ndarray
    plan: DmkPlan
    depth: int
    nbox: int
    timings: dict


def evaluate_detailed(kernel, sys, eps=1e-6, window="prolate", mode="free", plan=None,
                      **overrides):
    """Evaluate the velocity at all targets; returns a DmkResult with timings."""
    plan = plan or select_parameters(kernel, eps, window, sys.dim, mode, **overrides)
    if plan.dim != sys.dim or plan.kernel != kernel:
        raise ValueError("plan does not match the system")
    tm = {}
    t0 = time.perf_counter()
    sk = plan.split_kernel()
    ops = _build_ops(plan, sk)
    tm["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    periodic = plan.mode == "periodic"
    tree = T.build_tree(sys.sources, plan.n_s, sys.dim, periodic=periodic, p=plan.p,
                        targets=None if sys.aliased else sys.targets)
    tm["tree"] = time.perf_counter() - t0

    f, nv = sys.strengths(kernel)
    fs = np.ascontiguousarray(f[tree.src_perm])
    ns = np.ascontiguousarray(nv[tree.src_perm])
    chg = np.ascontiguousarray(_charges(kernel, sys.dim, fs, ns))

    t0 = time.perf_counter()
    outgoing = upward_pass(tree, ops, chg)
    tm["upward"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    root = _root_far_field(tree, ops, outgoing, f.sum(0))
    inc = downward_pass(tree, ops, outgoing, root)
    tm["downward"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    nt = len(tree.targets)
    out = np.zeros((nt, sys.dim))
    leaves = np.array([b for b in tree.leaves() if tree.tgt_hi[b] > tree.tgt_lo[b]],
                      dtype=np.int64)
    if len(leaves):
        cen, side = _centers(tree, leaves)
        vals = np.ascontiguousarray(np.stack([inc[int(b)] for b in leaves]))
        _interp.evaluate(sys.dim, ops.t, ops.w, tree.targets, tree.tgt_lo, tree.tgt_hi, cen,
                         side, leaves, vals, out)
    tm["evaluate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    residual_pass(tree, plan, sk, fs, ns, sys.aliased, out)
    if sys.aliased and kernel == S.STOKESLET:
        leaf_of = np.empty(nt, dtype=np.int64)
        for b in tree.leaves():
            leaf_of[tree.tgt_lo[b]:tree.tgt_hi[b]] = tree.level[b]
        nu = 2.0 ** -leaf_of.astype(float)
        out += S.self_interaction(sk, nu)[:, None] * fs
    tm["residual"] = time.perf_counter() - t0

    u = np.empty_like(out)
    u[tree.tgt_perm] = out
    if periodic and kernel == S.STRESSLET:
        u += O.stresslet_zero_mode(sys)
    return DmkResult(u, plan, tree.depth, tree.nbox, tm)


def evaluate(kernel, sys, eps=1e-6, window="prolate", mode="free", **overrides):
    """Velocity at the targets of ``sys`` to relative accuracy about ``eps``."""
    return evaluate_detailed(kernel, sys, eps, window, mode, **overrides).u
