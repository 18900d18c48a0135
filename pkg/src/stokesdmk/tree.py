"""Adaptive level-restricted 2^d-tree on the unit box [-1/2, 1/2]^d.

Boxes are addressed by (level, integer cell coordinates); the box at level l
with coordinates c covers prod [c_a r_l - 1/2, (c_a + 1) r_l - 1/2) with
r_l = 2^-l.  Subdivision is driven by the source count only.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

L_MAX = 30


@dataclass(eq=False)
class Tree:
    dim: int
    periodic: bool
    n_s: int
    p: int
    level: np.ndarray
    coords: np.ndarray
    parent: np.ndarray
    children: np.ndarray  # (nbox, 2^d), -1 for leaves
    src_lo: np.ndarray
    src_hi: np.ndarray
    tgt_lo: np.ndarray
    tgt_hi: np.ndarray
    src_perm: np.ndarray  # sorted position -> original index
    tgt_perm: np.ndarray
    sources: np.ndarray  # sorted
    targets: np.ndarray  # sorted
    coll_id: np.ndarray = field(repr=False)  # (nbox, 3^d): colleague at offset s, -1 if none
    coll_shift: np.ndarray = field(repr=False)  # (nbox, 3^d, d): periodic image shift
    index: dict = field(repr=False)

    @property
    def colleagues(self):
        """Per box: list of (box, image shift) including the box itself."""
        return [self.colleague_list(b) for b in range(self.nbox)]

    def colleague_list(self, b):
        return [(int(c), tuple(int(v) for v in self.coll_shift[b, k]))
                for k, c in enumerate(self.coll_id[b]) if c >= 0]

    @property
    def nbox(self):
        return len(self.level)

    @property
    def is_leaf(self):
        return self.children[:, 0] < 0

    @property
    def depth(self):
        return int(self.level.max())

    def side(self, b):
        return 2.0 ** -int(self.level[b])

    def center(self, b):
        return (self.coords[b] + 0.5) * self.side(b) - 0.5

    def levels(self):
        """Box ids grouped by level."""
        order = np.argsort(self.level, kind="stable")
        cuts = np.searchsorted(self.level[order], np.arange(self.depth + 2))
        return [order[cuts[l]:cuts[l + 1]] for l in range(self.depth + 1)]

    def leaves(self):
        return np.nonzero(self.is_leaf)[0]

    def box_at(self, level, coords):
        return self.index.get((level, tuple(int(c) for c in coords)), -1)

    def nsrc(self, b):
        return int(self.src_hi[b] - self.src_lo[b])

    def ntgt(self, b):
        return int(self.tgt_hi[b] - self.tgt_lo[b])


def _cells(x, level, periodic):
    n = 1 << level
    c = np.floor((x + 0.5) * n).astype(np.int64)
    if periodic:
        return c % n
    return np.clip(c, 0, n - 1)


def _wrap(x):
    return (x + 0.5) % 1.0 - 0.5


class _Builder:
    def __init__(self, src, tgt, dim, periodic):
        self.dim = dim
        self.periodic = periodic
        self.src = src.copy()
        self.tgt = tgt.copy()
        self.sperm = np.arange(len(src))
        self.tperm = np.arange(len(tgt))
        self.level = [0]
        self.coords = [np.zeros(dim, dtype=np.int64)]
        self.parent = [-1]
        self.children = [None]
        self.srange = [[0, len(src)]]
        self.trange = [[0, len(tgt)]]
        self.index = {(0, (0,) * dim): 0}

    def _partition(self, pts, perm, lo, hi, level):
        # stable reorder of pts[lo:hi] by child index at level+1; returns child start offsets
        seg = pts[lo:hi]
        cell = _cells(seg, level + 1, self.periodic)
        cid = np.zeros(len(seg), dtype=np.int64)
        for a in range(self.dim):
            cid |= (cell[:, a] & 1) << a
        order = np.argsort(cid, kind="stable")
        pts[lo:hi] = seg[order]
        perm[lo:hi] = perm[lo:hi][order]
        counts = np.bincount(cid, minlength=1 << self.dim)
        return lo + np.concatenate([[0], np.cumsum(counts)])

    def split(self, b):
        lev = self.level[b]
        s0 = self._partition(self.src, self.sperm, *self.srange[b], lev)
        t0 = self._partition(self.tgt, self.tperm, *self.trange[b], lev)
        kids = []
        for c in range(1 << self.dim):
            cc = 2 * self.coords[b] + np.array([(c >> a) & 1 for a in range(self.dim)])
            nb = len(self.level)
            self.level.append(lev + 1)
            self.coords.append(cc)
            self.parent.append(b)
            self.children.append(None)
            self.srange.append([int(s0[c]), int(s0[c + 1])])
            self.trange.append([int(t0[c]), int(t0[c + 1])])
            self.index[(lev + 1, tuple(int(v) for v in cc))] = nb
            kids.append(nb)
        self.children[b] = kids
        return kids

    def covering_leaf(self, level, cell):
        # deepest existing box containing the given cell
        for lev in range(level, -1, -1):
            key = (lev, tuple(int(v) for v in (cell >> (level - lev))))
            b = self.index.get(key)
            if b is not None:
                return b
        raise AssertionError("root must exist")


def _offsets(dim):
    return [np.array(s, dtype=np.int64) for s in itertools.product((-1, 0, 1), repeat=dim)]


def _neighbor_cell(coords, s, level, periodic):
    n = 1 << level
    cell = coords + s
    if periodic:
        wrapped = cell % n
        return wrapped, (cell - wrapped) // n
    if np.any(cell < 0) or np.any(cell >= n):
        return None, None
    return cell, np.zeros_like(cell)


def build_tree(sources, n_s, dim, periodic=False, p=1, targets=None, l_max=L_MAX):
    """Adaptive tree with 2:1 level restriction and colleague lists.

    ``targets=None`` uses the sources as targets.  Points are wrapped into the
    unit cell in periodic mode.
    """
    src = np.asarray(sources, dtype=float).reshape(-1, dim)
    tgt = src if targets is None else np.asarray(targets, dtype=float).reshape(-1, dim)
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    if periodic:
        src, tgt = _wrap(src), _wrap(tgt)
    elif np.any(np.abs(src) > 0.5) or np.any(np.abs(tgt) > 0.5):
        raise ValueError("points must lie in [-1/2, 1/2]^d")
    bld = _Builder(src, tgt, dim, periodic)

    # adaptive subdivision on source count
    queue = [0]
    capped = False
    while queue:
        b = queue.pop()
        lo, hi = bld.srange[b]
        if hi - lo <= n_s:
            continue
        if bld.level[b] >= l_max:
            capped = True
            continue
        queue.extend(bld.split(b))
    if capped:
        warnings.warn(f"tree depth capped at L_max={l_max} (duplicate points?)")

    _balance(bld)

    nbox = len(bld.level)
    children = np.full((nbox, 1 << dim), -1, dtype=np.int64)
    for b, ch in enumerate(bld.children):
        if ch is not None:
            children[b] = ch
    sr = np.array(bld.srange, dtype=np.int64)
    tr = np.array(bld.trange, dtype=np.int64)
    tree = Tree(
        dim=dim, periodic=periodic, n_s=n_s, p=p,
        level=np.array(bld.level, dtype=np.int64), coords=np.array(bld.coords, dtype=np.int64),
        parent=np.array(bld.parent, dtype=np.int64), children=children,
        src_lo=sr[:, 0], src_hi=sr[:, 1], tgt_lo=tr[:, 0], tgt_hi=tr[:, 1],
        src_perm=bld.sperm, tgt_perm=bld.tperm, sources=bld.src, targets=bld.tgt,
        coll_id=None, coll_shift=None, index=bld.index,
    )
    tree.coll_id, tree.coll_shift = _colleague_arrays(tree)
    return tree


def _as_struct(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    return a.view(np.dtype([(f"f{i}", np.int64) for i in range(a.shape[1])])).ravel()


class _LevelIndex:
    """Vectorized (coords -> box id) lookup for one level."""

    def __init__(self, coords, ids):
        keys = _as_struct(coords)
        order = np.argsort(keys, kind="stable")
        self.keys, self.ids = keys[order], np.asarray(ids)[order]

    def find(self, q):
        if len(self.keys) == 0 or len(q) == 0:
            return np.full(len(q), -1, dtype=np.int64)
        qs = _as_struct(q)
        pos = np.minimum(np.searchsorted(self.keys, qs), len(self.keys) - 1)
        return np.where(self.keys[pos] == qs, self.ids[pos], -1)


def _neighbor_cells(coords, level, periodic):
    # (n, 3^d, d) neighbor cells, image shifts and validity mask
    offs = np.array(_offsets(coords.shape[1]))
    n = 1 << level
    cell = coords[:, None, :] + offs[None]
    if periodic:
        wrapped = cell % n
        return wrapped, (cell - wrapped) // n, np.ones(cell.shape[:2], dtype=bool)
    ok = np.all((cell >= 0) & (cell < n), axis=2)
    return np.where(ok[..., None], cell, 0), np.zeros_like(cell), ok


def _balance(bld):
    # 2:1 balance, finest levels first; refining a coarse leaf only creates
    # violations at coarser levels, which are visited later in the same sweep
    changed = True
    while changed:
        changed = False
        for lev in range(max(bld.level), 1, -1):
            L = np.array(bld.level)
            leaf = np.array([c is None for c in bld.children])
            ids = np.nonzero((L == lev) & leaf)[0]
            if not len(ids):
                continue
            C = np.array(bld.coords)
            prev = np.nonzero(L == lev - 1)[0]
            idx = _LevelIndex(C[prev], prev)
            cell, _, ok = _neighbor_cells(C[ids], lev, bld.periodic)
            pc = np.unique((cell[ok] >> 1), axis=0)
            missing = pc[idx.find(pc) < 0]
            for cellp in missing:
                b = bld.covering_leaf(lev - 1, cellp)
                while bld.level[b] < lev - 1:
                    bld.split(b)
                    changed = True
                    b = bld.covering_leaf(lev - 1, cellp)


def _colleague_arrays(tree):
    nb, d = tree.nbox, tree.dim
    cid = np.full((nb, 3**d), -1, dtype=np.int64)
    csh = np.zeros((nb, 3**d, d), dtype=np.int64)
    for lev, ids in enumerate(tree.levels()):
        if not len(ids):
            continue
        idx = _LevelIndex(tree.coords[ids], ids)
        cell, shift, ok = _neighbor_cells(tree.coords[ids], lev, tree.periodic)
        found = idx.find(cell.reshape(-1, d)).reshape(cell.shape[:2])
        cid[ids] = np.where(ok, found, -1)
        csh[ids] = shift
    return cid, csh


def neighbor_query(tree, b):
    """(colleagues, coarse, fine) as lists of (box, image shift).

    coarse: adjacent leaves one level up; fine: adjacent leaves one level down
    (only reported for leaf b).
    """
    lev = int(tree.level[b])
    coll = tree.colleague_list(b)
    coarse, fine = [], []
    if tree.children[b, 0] >= 0:
        return coll, coarse, fine
    seen = set()
    for s in _offsets(tree.dim):
        if not np.any(s):
            continue
        cell, shift = _neighbor_cell(tree.coords[b], s, lev, tree.periodic)
        if cell is None:
            continue
        c = tree.box_at(lev, cell)
        if c < 0:
            pc = tree.box_at(lev - 1, cell >> 1)
            key = (pc, tuple(int(v) for v in shift))
            if pc >= 0 and tree.children[pc, 0] < 0 and key not in seen:
                seen.add(key)
                coarse.append(key)
        elif tree.children[c, 0] >= 0:
            for ch in tree.children[c]:
                key = (int(ch), tuple(int(v) for v in shift))
                if key in seen or tree.children[ch, 0] >= 0:
                    continue
                if _touch_boxes(tree, b, ch, shift):
                    seen.add(key)
                    fine.append(key)
    return coll, coarse, fine


def _touch_boxes(tree, a, b, shift):
    ra, rb = tree.side(a), tree.side(b)
    lo_a = tree.coords[a] * ra
    lo_b = tree.coords[b] * rb + np.asarray(shift, dtype=float)
    return bool(np.all(lo_a <= lo_b + rb + 1e-15) and np.all(lo_b <= lo_a + ra + 1e-15))


def residual_lists(tree):
    """For every leaf: adjacent leaves (self included) with shift and level."""
    out = {}
    for b in tree.leaves():
        coll, coarse, fine = neighbor_query(tree, b)
        lst = [(c, s) for c, s in coll if tree.children[c, 0] < 0]
        lst += coarse + fine
        out[int(b)] = lst
    return out


def proxy_nodes_1d(p):
    """Chebyshev points of the first kind on [-1/2, 1/2]."""
    return 0.5 * np.cos((2 * np.arange(p) + 1) * np.pi / (2 * p))


def proxy_nodes(tree, b, p=None):
    """p^d tensor-product Chebyshev nodes scaled to box b."""
    p = tree.p if p is None else p
    t = proxy_nodes_1d(p) * tree.side(b)
    c = tree.center(b)
    grids = np.meshgrid(*[c[a] + t for a in range(tree.dim)], indexing="ij")
    return np.stack(grids, -1).reshape(-1, tree.dim)


def level_restricted(tree):
    """Exhaustive pair scan: boundary-sharing leaves differ by at most one level."""
    leaves = tree.leaves()
    side = 2.0 ** -tree.level[leaves].astype(float)
    lo = tree.coords[leaves] * side[:, None]
    hi = lo + side[:, None]
    lev = tree.level[leaves]
    shifts = (np.array(list(itertools.product((-1, 0, 1), repeat=tree.dim)), dtype=float)
              if tree.periodic else np.zeros((1, tree.dim)))
    tol = 1e-15
    for i0 in range(0, len(leaves), 256):
        sl = slice(i0, i0 + 256)
        far = np.abs(lev[sl, None] - lev[None, :]) > 1
        if not far.any():
            continue
        for s in shifts:
            touch = np.all((lo[sl, None, :] <= hi[None, :, :] + s + tol)
                           & (lo[None, :, :] + s <= hi[sl, None, :] + tol), axis=2)
            if np.any(touch & far):
                return False
    return True


def dump(tree):
    """Line-oriented text dump: id level center nsrc ntgt leaf colleagues."""
    lines = []
    for b in range(tree.nbox):
        c = " ".join(f"{v:+.6f}" for v in tree.center(b))
        col = ",".join(f"{k}" + ("" if not any(s) else "@" + ":".join(map(str, s)))
                       for k, s in tree.colleague_list(b))
        lines.append(f"{b} {int(tree.level[b])} {c} {tree.nsrc(b)} {tree.ntgt(b)} "
                     f"{int(tree.children[b, 0] < 0)} {col}")
    return "\n".join(lines) + "\n"
