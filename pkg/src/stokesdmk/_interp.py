"""Compiled tensor-product Chebyshev interpolation on proxy grids."""
import numpy as np
from numba import njit


def cheb_nodes(p):
    """First-kind Chebyshev nodes on [-1/2, 1/2] and their barycentric weights."""
    j = np.arange(p)
    t = 0.5 * np.cos((2 * j + 1) * np.pi / (2 * p))
    w = (-1.0) ** j * np.sin((2 * j + 1) * np.pi / (2 * p))
    return t, w


def lagrange_matrix(t, w, x):
    """L[i, j] = L_i(x_j), barycentric form."""
    x = np.asarray(x, dtype=float)
    out = np.empty((len(t), len(x)))
    for k, xv in enumerate(x):
        out[:, k] = _lagrange_1d(t, w, xv)
    return out


@njit(cache=True, inline="always")
def _lagrange_1d(t, w, x):
    p = t.shape[0]
    out = np.empty(p)
    for i in range(p):
        if x == t[i]:
            out[:] = 0.0
            out[i] = 1.0
            return out
    s = 0.0
    for i in range(p):
        out[i] = w[i] / (x - t[i])
        s += out[i]
    for i in range(p):
        out[i] /= s
    return out


@njit(cache=True)
def anterpolate(dim, t, w, pts, chg, lo, hi, centers, sides, boxes, out):
    """out[k] (p^d, q) = sum over points of box boxes[k] of L_j(x) * charge."""
    p = t.shape[0]
    q = chg.shape[1]
    for k in range(boxes.shape[0]):
        b = boxes[k]
        acc = out[k]
        for i in range(lo[b], hi[b]):
            l0 = _lagrange_1d(t, w, (pts[i, 0] - centers[k, 0]) / sides[k])
            l1 = _lagrange_1d(t, w, (pts[i, 1] - centers[k, 1]) / sides[k])
            if dim == 3:
                l2 = _lagrange_1d(t, w, (pts[i, 2] - centers[k, 2]) / sides[k])
                for a in range(p):
                    for b1 in range(p):
                        ab = l0[a] * l1[b1]
                        base = (a * p + b1) * p
                        for c in range(p):
                            v = ab * l2[c]
                            for m in range(q):
                                acc[base + c, m] += v * chg[i, m]
            else:
                for a in range(p):
                    for b1 in range(p):
                        v = l0[a] * l1[b1]
                        for m in range(q):
                            acc[a * p + b1, m] += v * chg[i, m]


@njit(cache=True)
def evaluate(dim, t, w, pts, lo, hi, centers, sides, boxes, vals, out):
    """out[i] += sum_j L_j(x_i) vals[k][j] for points i of box boxes[k]."""
    p = t.shape[0]
    q = vals.shape[2]
    for k in range(boxes.shape[0]):
        b = boxes[k]
        v = vals[k]
        for i in range(lo[b], hi[b]):
            l0 = _lagrange_1d(t, w, (pts[i, 0] - centers[k, 0]) / sides[k])
            l1 = _lagrange_1d(t, w, (pts[i, 1] - centers[k, 1]) / sides[k])
            if dim == 3:
                l2 = _lagrange_1d(t, w, (pts[i, 2] - centers[k, 2]) / sides[k])
                for a in range(p):
                    for b1 in range(p):
                        ab = l0[a] * l1[b1]
                        base = (a * p + b1) * p
                        for c in range(p):
                            s = ab * l2[c]
                            for m in range(q):
                                out[i, m] += s * v[base + c, m]
            else:
                for a in range(p):
                    for b1 in range(p):
                        s = l0[a] * l1[b1]
                        for m in range(q):
                            out[i, m] += s * v[a * p + b1, m]
