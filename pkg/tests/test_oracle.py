import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokesdmk import oracle as O
from stokesdmk import split as S
from stokesdmk import windows as W


def _system(kernel, dim, n, seed, targets=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, (n, dim))
    f = rng.uniform(-0.5, 0.5, (n,) if (kernel == S.ROTLET and dim == 2) else (n, dim))
    nv = rng.standard_normal((n, dim)) if kernel == S.STRESSLET else None
    t = rng.uniform(-0.5, 0.5, (targets, dim)) if targets else None
    return O.ParticleSystem(dim, x, f, nv, t)


def _einsum_sum(kernel, sys):
    d = sys.tgt[:, None, :] - sys.sources[None, :, :]
    if sys.aliased:
        idx = np.arange(len(sys.sources))
        d[idx, idx] = 1.0  # placeholder, masked below
    K = S.kernel_tensor(kernel, sys.dim, d)
    if sys.aliased:
        K[idx, idx] = 0
    if kernel == S.STRESSLET:
        return np.einsum("tsjlm,sl,sm->tj", K, sys.f, sys.n)
    if kernel == S.ROTLET and sys.dim == 2:
        return np.einsum("tsj,s->tj", K, sys.f)
    return np.einsum("tsjl,sl->tj", K, sys.f)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("kernel", S.STOKES_KERNELS)
@pytest.mark.parametrize("targets", [0, 17])
def test_direct_sum_matches_dense_tensor_sum(kernel, dim, targets):
    sys = _system(kernel, dim, 40, 1, targets)
    assert np.allclose(O.direct_sum(kernel, sys), _einsum_sum(kernel, sys), rtol=1e-12,
                       atol=1e-12)


def test_direct_sum_singular_configuration():
    x = np.array([[0.1, 0.2, 0.3], [-0.1, 0.0, 0.2]])
    sys = O.ParticleSystem(3, x, np.ones((2, 3)), targets=x[:1].copy())
    with pytest.raises(O.SingularConfigurationError):
        O.direct_sum(S.STOKESLET, sys)


def test_particle_system_validation():
    with pytest.raises(ValueError):
        O.ParticleSystem(3, np.array([[0.6, 0, 0]]), np.ones((1, 3)))
    with pytest.raises(ValueError):
        O.ParticleSystem(3, np.zeros((2, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        O.ParticleSystem(4, np.zeros((2, 4)), np.ones((2, 4)))
    with pytest.raises(ValueError):
        O.ParticleSystem(2, np.zeros((1, 2)), np.array([[np.nan, 0.0]]))
    sys = O.ParticleSystem(2, np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        sys.strengths(S.STRESSLET)
    with pytest.raises(ValueError):
        sys.strengths(S.ROTLET)  # 2D rotlet takes a scalar torque


@given(st.lists(st.integers(-3, 3), min_size=3, max_size=3))
@settings(max_examples=20, deadline=None)
def test_shifted_by_lattice_vector_is_identity(v):
    sys = _system(S.STOKESLET, 3, 20, 2)
    moved = sys.shifted(np.asarray(v, dtype=float))
    d = np.abs(moved.sources - sys.sources)
    assert np.all((d < 1e-14) | (np.abs(d - 1) < 1e-14))


@pytest.mark.parametrize("kernel", S.STOKES_KERNELS)
@pytest.mark.parametrize("dim", [2, 3])
def test_free_space_ewald_matches_direct_sum(kernel, dim):
    sys = _system(kernel, dim, 60, 7)
    w = W.build_gaussian(0.2) if dim == 3 else W.build_prolate(30.0)
    sk = S.build_split_kernel(kernel, dim, w, tol=1e-12)
    u = O.ewald_reference(sk, sys, "free")
    assert O.rel_l2(u, O.direct_sum(kernel, sys)) < 1e-9


@pytest.mark.parametrize("kernel", S.STOKES_KERNELS)
def test_periodic_ewald_independent_of_splitting(kernel):
    # the periodic sum must not depend on the window used to split it
    sys = _system(kernel, 3, 30, 11)
    if kernel != S.STRESSLET:
        f = sys.f - sys.f.mean(0)  # zero net force: conditionally convergent otherwise
        sys = O.ParticleSystem(3, sys.sources, f, sys.n)
    u1 = O.ewald_reference(S.build_split_kernel(kernel, 3, W.build_prolate(40.0)), sys, "periodic")
    u2 = O.ewald_reference(S.build_split_kernel(kernel, 3, W.build_gaussian(0.12)), sys,
                           "periodic")
    assert O.rel_l2(u1, u2) < 1e-10


def test_periodic_stokeslet_lattice_shift_invariance():
    sys = _system(S.STOKESLET, 3, 25, 5)
    sk = S.build_split_kernel(S.STOKESLET, 3, W.build_gaussian(0.12))
    u = O.ewald_reference(sk, sys, "periodic")
    shift = np.array([0.31, -0.17, 0.44])
    v = O.ewald_reference(sk, sys.shifted(shift), "periodic")
    assert O.rel_l2(v, u) < 1e-11


def test_stresslet_zero_mode_formula():
    sys = _system(S.STRESSLET, 3, 5, 3)
    u0 = O.stresslet_zero_mode(sys)
    fn = np.sum(sys.f * sys.n, 1)
    ref = np.array([-sum((xb - xa) * c for xa, c in zip(sys.sources, fn)) for xb in sys.sources])
    assert np.allclose(u0, ref)


def test_residual_sum_matches_dense_residual():
    sys = _system(S.STOKESLET, 3, 50, 9)
    sk = S.build_split_kernel(S.STOKESLET, 3, W.build_gaussian(0.1))
    nu = 0.3
    d = sys.sources[:, None] - sys.sources[None]
    r = np.linalg.norm(d, axis=2)
    np.fill_diagonal(r, 1.0)
    c1, c2 = sk.residual_coeffs(r, nu)
    np.fill_diagonal(c1, 0)
    np.fill_diagonal(c2, 0)
    ref = np.einsum("ts,sj->tj", c1, sys.f) + np.einsum("ts,tsj,tsl,sl->tj", c2, d, d, sys.f)
    assert np.allclose(O.direct_residual_sum(sk, sys, nu), ref, rtol=1e-12, atol=1e-12)


def test_ewald_guards():
    sk = S.build_split_kernel(S.STOKESLET, 3, W.build_gaussian(0.2))
    sys = _system(S.STOKESLET, 3, 4, 0)
    with pytest.raises(ValueError):
        O.ewald_reference(sk, sys, "free", grid=O.FourierGrid("free", 3.0, 10))
    with pytest.raises(ValueError):
        O.ewald_reference(sk, sys, "free", grid=O.FourierGrid("periodic", 2 * np.pi, 5))
    sk2 = S.build_split_kernel(S.STRESSLET, 2, W.build_gaussian(0.2), tol=1e-10)
    with pytest.raises(NotImplementedError):
        O.ewald_reference(sk2, _system(S.STRESSLET, 2, 4, 0), "periodic")


def test_rel_l2():
    assert O.rel_l2(np.ones(3), np.ones(3)) == 0
    assert O.rel_l2(np.array([1.0, 0]), np.array([0.0, 0])) == 1.0
