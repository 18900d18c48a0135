"""Compiled pair-interaction loops shared by the oracle and the DMK residual pass."""
import numpy as np
from numba import njit

K_STOKESLET, K_STRESSLET, K_ROTLET = 0, 1, 2
_PI = np.pi


@njit(cache=True, inline="always")
def clenshaw(c, t):
    b1 = 0.0
    b2 = 0.0
    t2 = 2.0 * t
    for j in range(c.shape[0] - 1, 0, -1):
        b1, b2 = t2 * b1 - b2 + c[j], b1
    return t * b1 - b2 + c[0]


@njit(cache=True, inline="always")
def exact_coeffs(kc, dim, r):
    if dim == 3:
        if kc == K_STOKESLET:
            return 1.0 / (8 * _PI * r), 1.0 / (8 * _PI * r**3)
        if kc == K_STRESSLET:
            return 0.0, -3.0 / (4 * _PI * r**5)
        return 1.0 / (8 * _PI * r**3), 0.0
    if kc == K_STOKESLET:
        return -np.log(r) / (4 * _PI), 1.0 / (4 * _PI * r * r)
    if kc == K_STRESSLET:
        return 0.0, -1.0 / (_PI * r**4)
    return 1.0 / (4 * _PI * r * r), 0.0


@njit(cache=True, inline="always")
def residual_coeffs(kc, dim, rho, n1c, n2c):
    # scale-one residual coefficients from Chebyshev numerators on [0, 1]
    t = 2.0 * rho - 1.0
    n1 = clenshaw(n1c, t)
    n2 = clenshaw(n2c, t) if kc != K_ROTLET else 0.0
    if dim == 3:
        if kc == K_STOKESLET:
            return n1 / (8 * _PI * rho), n2 / (8 * _PI * rho**3)
        if kc == K_STRESSLET:
            return n1 / (8 * _PI * rho**3), -3.0 * n2 / (4 * _PI * rho**5)
        return n1 / (8 * _PI * rho**3), 0.0
    if kc == K_STOKESLET:
        return -np.log(rho) / (4 * _PI) - n1, n2 / (4 * _PI * rho * rho)
    if kc == K_STRESSLET:
        return n1, -n2 / (_PI * rho**4)
    return n1 / (4 * _PI * rho * rho), 0.0


@njit(cache=True, inline="always")
def apply(kc, dim, x, c1, c2, f, nv, j, out):
    """out += K(x) applied to strength f[j] (and orientation nv[j] for the stresslet)."""
    if kc == K_STOKESLET:
        xf = 0.0
        for a in range(dim):
            xf += x[a] * f[j, a]
        for a in range(dim):
            out[a] += c1 * f[j, a] + c2 * x[a] * xf
    elif kc == K_STRESSLET:
        xf = 0.0
        xn = 0.0
        fn = 0.0
        for a in range(dim):
            xf += x[a] * f[j, a]
            xn += x[a] * nv[j, a]
            fn += f[j, a] * nv[j, a]
        for a in range(dim):
            out[a] += c1 * (f[j, a] * xn + x[a] * fn + nv[j, a] * xf) + c2 * x[a] * xf * xn
    else:
        if dim == 3:
            out[0] += c1 * (f[j, 1] * x[2] - f[j, 2] * x[1])
            out[1] += c1 * (f[j, 2] * x[0] - f[j, 0] * x[2])
            out[2] += c1 * (f[j, 0] * x[1] - f[j, 1] * x[0])
        else:
            out[0] += c1 * f[j, 0] * x[1]
            out[1] -= c1 * f[j, 0] * x[0]


@njit(cache=True)
def direct_sum(kc, dim, tgt, src, f, nv, aliased, out):
    """Exact kernel sum with compensated accumulation; returns -1 or a bad target index."""
    x = np.empty(dim)
    tmp = np.empty(dim)
    comp = np.empty(dim)
    for i in range(tgt.shape[0]):
        acc = np.zeros(dim)
        comp[:] = 0.0
        for j in range(src.shape[0]):
            if aliased and i == j:
                continue
            r2 = 0.0
            for a in range(dim):
                x[a] = tgt[i, a] - src[j, a]
                r2 += x[a] * x[a]
            if r2 == 0.0:
                return i
            r = np.sqrt(r2)
            c1, c2 = exact_coeffs(kc, dim, r)
            tmp[:] = 0.0
            apply(kc, dim, x, c1, c2, f, nv, j, tmp)
            for a in range(dim):
                y = tmp[a] - comp[a]
                s = acc[a] + y
                comp[a] = (s - acc[a]) - y
                acc[a] = s
        for a in range(dim):
            out[i, a] = acc[a]
    return -1


@njit(cache=True, inline="always")
def residual_pair(kc, dim, tx, sx, shift, f, nv, j, nu, scale, n1c, n2c, x, out):
    # returns False on coincidence; adds nu^A R_1((tx - sx - shift)/nu)
    r2 = 0.0
    for a in range(dim):
        x[a] = (tx[a] - sx[a] - shift[a]) / nu
        r2 += x[a] * x[a]
    if r2 >= 1.0:
        return True
    if r2 == 0.0:
        return False
    c1, c2 = residual_coeffs(kc, dim, np.sqrt(r2), n1c, n2c)
    apply(kc, dim, x, c1 * scale, c2 * scale, f, nv, j, out)
    return True


@njit(cache=True)
def residual_all_pairs(kc, dim, tgt, src, f, nv, aliased, nu, A, shifts, n1c, n2c, out):
    """O(NM) residual sum over the given image shifts (shift 0 must be first when aliased)."""
    x = np.empty(dim)
    scale = nu**A
    for i in range(tgt.shape[0]):
        for s in range(shifts.shape[0]):
            zero = True
            for a in range(dim):
                if shifts[s, a] != 0.0:
                    zero = False
            for j in range(src.shape[0]):
                if aliased and zero and i == j:
                    continue
                if not residual_pair(kc, dim, tgt[i], src[j], shifts[s], f, nv, j, nu, scale,
                                     n1c, n2c, x, out[i]):
                    return i
    return -1


@njit(cache=True)
def residual_leaves(kc, dim, tgt, src, f, nv, t_orig, s_orig, aliased,
                    tlo, thi, slo, shi, nb_ptr, nb_src, nb_shift, nb_nu, shifts,
                    A, n1c, n2c, out):
    """Residual pass over leaf neighbor lists.

    Leaf b interacts with source leaves nb_src[nb_ptr[b]:nb_ptr[b+1]] displaced by
    shifts[nb_shift[.]], at residual scale nb_nu[.].  Returns -1 or a bad target index.
    """
    x = np.empty(dim)
    y = np.empty(dim)
    acc = np.empty(dim)
    nleaf = nb_ptr.shape[0] - 1
    for b in range(nleaf):
        for q in range(nb_ptr[b], nb_ptr[b + 1]):
            sb = nb_src[q]
            sh = shifts[nb_shift[q]]
            zero = True
            for a in range(dim):
                if sh[a] != 0.0:
                    zero = False
            nu = nb_nu[q]
            inv = 1.0 / nu
            nu2 = nu * nu
            scale = nu**A
            j0 = slo[sb]
            j1 = shi[sb]
            for i in range(tlo[b], thi[b]):
                for a in range(dim):
                    y[a] = tgt[i, a] - sh[a]
                    acc[a] = 0.0
                for j in range(j0, j1):
                    r2 = 0.0
                    for a in range(dim):
                        d = y[a] - src[j, a]
                        x[a] = d
                        r2 += d * d
                    if r2 >= nu2:
                        continue
                    if aliased and zero and t_orig[i] == s_orig[j]:
                        continue
                    if r2 == 0.0:
                        return i
                    for a in range(dim):
                        x[a] *= inv
                    c1, c2 = residual_coeffs(kc, dim, np.sqrt(r2) * inv, n1c, n2c)
                    apply(kc, dim, x, c1 * scale, c2 * scale, f, nv, j, acc)
                for a in range(dim):
                    out[i, a] += acc[a]
    return -1


@njit(cache=True)
def residual_leaves_sym(kc, dim, pts, f, nv, lo, hi, leaves, nb_ptr, nb_src, nb_shift,
                        nb_nu, nb_own, shifts, A, n1c, n2c, out):
    """Aliased residual pass visiting each unordered pair once.

    Entry q of leaf leaves[b] is processed only when nb_own[q] is set; its mirror
    entry (source leaf, negated shift) is then skipped.  The residual kernel is even
    (Stokeslet) or odd (stresslet, rotlet) in x, which fixes the mirrored sign.
    Returns -1 or a bad index.
    """
    x = np.empty(dim)
    y = np.empty(dim)
    acc = np.empty(dim)
    for b in range(leaves.shape[0]):
        tb = leaves[b]
        for q in range(nb_ptr[b], nb_ptr[b + 1]):
            if not nb_own[q]:
                continue
            sb = nb_src[q]
            sh = shifts[nb_shift[q]]
            zero = True
            for a in range(dim):
                if sh[a] != 0.0:
                    zero = False
            same = zero and sb == tb
            nu = nb_nu[q]
            inv = 1.0 / nu
            nu2 = nu * nu
            scale = nu**A
            for i in range(lo[tb], hi[tb]):
                for a in range(dim):
                    y[a] = pts[i, a] - sh[a]
                    acc[a] = 0.0
                jstart = i + 1 if same else lo[sb]
                for j in range(jstart, hi[sb]):
                    r2 = 0.0
                    for a in range(dim):
                        d = y[a] - pts[j, a]
                        x[a] = d
                        r2 += d * d
                    if r2 >= nu2:
                        continue
                    if r2 == 0.0:
                        return i
                    for a in range(dim):
                        x[a] *= inv
                    c1, c2 = residual_coeffs(kc, dim, np.sqrt(r2) * inv, n1c, n2c)
                    c1 *= scale
                    c2 *= scale
                    # both directions written out: calls with array arguments are slow here
                    if kc == K_STOKESLET:
                        xfj = 0.0
                        xfi = 0.0
                        for a in range(dim):
                            xfj += x[a] * f[j, a]
                            xfi += x[a] * f[i, a]
                        for a in range(dim):
                            acc[a] += c1 * f[j, a] + c2 * x[a] * xfj
                            out[j, a] += c1 * f[i, a] + c2 * x[a] * xfi
                    elif kc == K_STRESSLET:
                        xfj = 0.0
                        xnj = 0.0
                        fnj = 0.0
                        xfi = 0.0
                        xni = 0.0
                        fni = 0.0
                        for a in range(dim):
                            xfj += x[a] * f[j, a]
                            xnj += x[a] * nv[j, a]
                            fnj += f[j, a] * nv[j, a]
                            xfi += x[a] * f[i, a]
                            xni += x[a] * nv[i, a]
                            fni += f[i, a] * nv[i, a]
                        for a in range(dim):
                            acc[a] += (c1 * (f[j, a] * xnj + x[a] * fnj + nv[j, a] * xfj)
                                       + c2 * x[a] * xfj * xnj)
                            out[j, a] -= (c1 * (f[i, a] * xni + x[a] * fni + nv[i, a] * xfi)
                                          + c2 * x[a] * xfi * xni)
                    elif dim == 3:
                        acc[0] += c1 * (f[j, 1] * x[2] - f[j, 2] * x[1])
                        acc[1] += c1 * (f[j, 2] * x[0] - f[j, 0] * x[2])
                        acc[2] += c1 * (f[j, 0] * x[1] - f[j, 1] * x[0])
                        out[j, 0] -= c1 * (f[i, 1] * x[2] - f[i, 2] * x[1])
                        out[j, 1] -= c1 * (f[i, 2] * x[0] - f[i, 0] * x[2])
                        out[j, 2] -= c1 * (f[i, 0] * x[1] - f[i, 1] * x[0])
                    else:
                        acc[0] += c1 * f[j, 0] * x[1]
                        acc[1] -= c1 * f[j, 0] * x[0]
                        out[j, 0] -= c1 * f[i, 0] * x[1]
                        out[j, 1] += c1 * f[i, 0] * x[0]
                for a in range(dim):
                    out[i, a] += acc[a]
    return -1
