import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cineflow import mri, objective
from cineflow.grid import CoilMaps, SamplingMask
from cineflow.objective import ModelParams
from conftest import crandn


def small_system(rng, nt=2, nc=2, nx=6, ny=6, full=False):
    maps = crandn(rng, (nc, nx, ny))
    if full:
        mask = SamplingMask.full(nt, nx)
    else:
        mask = SamplingMask(tuple(tuple(sorted(rng.choice(nx, nx // 2, replace=False).tolist()))
                                  for _ in range(nt)), nx)
    return mri.MriSystem(CoilMaps(maps), mask)


ALL_ON = ModelParams(alpha1=0.3, alpha2=0.2, alpha3=0.5, eps1=0.05, eps2=0.07, eps3=0.04)


# --- scalar-loop oracle of F --------------------------------------------------

def h(norm, eps):
    return norm * norm / (2 * eps) if norm <= eps else norm - eps / 2


def loop_objective(rho, v, y, system, p):
    nt, nx, ny = rho.shape
    maps = system.coils.maps
    sel = system.mask.as_array()
    cx, cy = nx // 2, ny // 2
    data = 0.0
    for t in range(nt):
        for i in range(maps.shape[0]):
            for kx in range(nx):
                if not sel[t, kx]:
                    continue
                for ky in range(ny):
                    s = 0j
                    for x in range(nx):
                        for yy in range(ny):
                            ph = -2 * math.pi * ((kx - cx) * (x - cx) / nx + (ky - cy) * (yy - cy) / ny)
                            s += maps[i, x, yy] * rho[t, x, yy] * cmath.exp(1j * ph)
                    s /= math.sqrt(nx * ny)
                    data += abs(s - y[t, i, kx, ky]) ** 2

    def fwd(u, t, x, yy, ax):
        if ax == 0:
            return u[t, x + 1, yy] - u[t, x, yy] if x < nx - 1 else 0.0
        return u[t, x, yy + 1] - u[t, x, yy] if yy < ny - 1 else 0.0

    def cen(u, t, x, yy, ax):
        if ax == 0:
            return 0.5 * (u[t, min(x + 1, nx - 1), yy] - u[t, max(x - 1, 0), yy])
        return 0.5 * (u[t, x, min(yy + 1, ny - 1)] - u[t, x, max(yy - 1, 0)])

    def tv(fields, eps):
        total = 0.0
        for u in fields:
            for t in range(nt):
                for x in range(nx):
                    for yy in range(ny):
                        total += h(math.hypot(fwd(u, t, x, yy, 0), fwd(u, t, x, yy, 1)), eps)
        return total

    r1 = tv([rho.real, rho.imag], p.eps1)
    r2 = tv([v[0].real, v[1].real, v[0].imag, v[1].imag], p.eps2)
    r3 = 0.0
    a, b = rho.real, rho.imag
    for t in range(nt):
        for x in range(nx):
            for yy in range(ny):
                dt1 = a[t + 1, x, yy] - a[t, x, yy] if t < nt - 1 else 0.0
                dt2 = b[t + 1, x, yy] - b[t, x, yy] if t < nt - 1 else 0.0
                q1 = dt1
                q2 = dt2
                for k in range(2):
                    v1, v2 = v[k, t, x, yy].real, v[k, t, x, yy].imag
                    g1, g2 = cen(a, t, x, yy, k), cen(b, t, x, yy, k)
                    q1 += v1 * g1 + v2 * g2
                    q2 += v2 * g1 - v1 * g2
                r3 += h(math.hypot(q1, q2), p.eps3)
    return data + p.alpha1 * r1 + p.alpha2 * r2 + p.alpha3 * r3


def test_objective_matches_loop_oracle(rng):
    s = small_system(rng, nt=2, nc=2, nx=4, ny=4)
    for scale in (0.01, 1.0):
        rho = scale * crandn(rng, s.image_shape)
        v = crandn(rng, (2,) + s.image_shape)
        y = mri.forward(s, crandn(rng, s.image_shape))
        got = objective.objective_value(rho, v, y, s, ALL_ON)
        assert got == pytest.approx(loop_objective(rho, v, y, s, ALL_ON), rel=1e-12)


def test_zero_instance(rng):
    s = small_system(rng)
    z = np.zeros(s.image_shape, complex)
    assert objective.objective_value(z, np.zeros((2,) + s.image_shape), np.zeros(s.kspace_shape), s, ALL_ON) == 0


def test_no_regularization_is_data_term(rng):
    s = small_system(rng)
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    p = ModelParams()
    assert objective.objective_value(rho, v, y, s, p) == mri.data_term_and_grad(s, rho, y)[0]


# --- Huber ------------------------------------------------------------------

def test_huber_zero():
    val, g = objective.huber_value_grad(np.zeros((2, 3, 4)), 0.1)
    assert val == 0 and not g.any()


def test_huber_kink_continuity():
    eps = 0.3
    x = np.array([[0.6 * eps], [0.8 * eps]])
    val, g = objective.huber_value_grad(x, eps)
    assert val == pytest.approx(eps / 2, rel=1e-15)
    assert np.allclose(g, x / eps, rtol=1e-15)
    assert x[:, 0] @ x[:, 0] / (2 * eps) == pytest.approx(np.hypot(*x[:, 0]) - eps / 2, rel=1e-14)


def test_huber_gradient_fd(rng):
    eps, step = 0.2, 1e-6
    x = rng.standard_normal((2, 50)) * 0.3
    norms = np.hypot(*x)
    _, g = objective.huber_value_grad(x, eps)
    checked = 0
    for j in range(50):
        if abs(norms[j] - eps) <= 10 * step:
            continue
        for d in range(2):
            e = np.zeros_like(x)
            e[d, j] = step
            fd = (objective.huber_value_grad(x + e, eps)[0] - objective.huber_value_grad(x - e, eps)[0]) / (2 * step)
            assert fd == pytest.approx(g[d, j], rel=1e-6, abs=1e-9)
            checked += 1
    assert checked > 50


def test_huber_limits(rng):
    x = rng.standard_normal((2, 40))
    val, _ = objective.huber_value_grad(x, 1e-8)
    assert val == pytest.approx(np.sum(np.hypot(*x)), rel=1e-4)
    small = x / np.max(np.hypot(*x)) * 0.05
    val, _ = objective.huber_value_grad(small, 0.05)
    assert val == pytest.approx(np.sum(small ** 2) / 0.1, rel=1e-14)


def test_huber_eps_must_be_positive():
    with pytest.raises(ValueError):
        objective.huber_value_grad(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        ModelParams(eps2=0.0)
    with pytest.raises(ValueError):
        ModelParams(alpha1=-1.0)


def test_huber_parts_site_vectors(rng):
    # real and imaginary parts each form (dx, dy) site vectors
    g = crandn(rng, (2, 3, 4, 5))
    val, grad = objective.huber_parts(g, 0.4)
    v_re, g_re = objective.huber_value_grad(g.real, 0.4)
    v_im, g_im = objective.huber_value_grad(g.imag, 0.4)
    assert val == pytest.approx(v_re + v_im, rel=1e-14)
    assert np.allclose(grad, g_re + 1j * g_im)


# --- gradients --------------------------------------------------------------

def _fd_check(f, x, g, rng, count=20, step=1e-6, rtol=1e-5):
    done = 0
    while done < count:
        idx = tuple(rng.integers(0, n) for n in x.shape)
        unit = 1.0 if rng.random() < 0.5 else 1j
        e = np.zeros_like(x)
        e[idx] = unit * step
        fd = (f(x + e) - f(x - e)) / (2 * step)
        an = g[idx].real if unit == 1.0 else g[idx].imag
        assert fd == pytest.approx(an, rel=rtol, abs=1e-7 * max(1.0, abs(an)))
        done += 1


def test_grad_rho_finite_differences(rng):
    s = small_system(rng, nt=2, nx=6, ny=6)
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    g = objective.grad_rho(rho, v, y, s, ALL_ON)
    _fd_check(lambda r: objective.objective_value(r, v, y, s, ALL_ON), rho, g, rng)


def test_grad_v_finite_differences(rng):
    s = small_system(rng, nt=2, nx=6, ny=6)
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    g = objective.grad_v(rho, v, y, s, ALL_ON)
    _fd_check(lambda vv: objective.objective_value(rho, vv, y, s, ALL_ON), v, g, rng)


def test_gradient_oracles_match(rng):
    s = small_system(rng)
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    assert np.allclose(objective.rho_gradient_oracle(y, s, v, ALL_ON)(rho),
                       objective.grad_rho(rho, v, y, s, ALL_ON), atol=1e-10)
    assert np.allclose(objective.v_gradient_oracle(rho, ALL_ON)(v),
                       objective.grad_v(rho, v, y, s, ALL_ON), atol=1e-12)


def test_dt_reduction(rng):
    s = small_system(rng)
    rho = crandn(rng, s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    p = ModelParams(alpha3=0.7, eps3=0.1)
    z = np.zeros((2,) + s.image_shape)
    from cineflow import diffops
    dt = diffops.d_forward_time(rho)
    hg = dt / np.maximum(np.abs(dt), 0.1)
    expect = mri.data_term_and_grad(s, rho, y)[1] + 0.7 * diffops.adjoint_of(diffops.StencilKind.FORWARD_TIME, hg)
    assert np.allclose(objective.grad_rho(rho, z, y, s, p), expect, atol=1e-12)


def test_grad_v_degenerate_cases(rng):
    s = small_system(rng)
    flat = np.broadcast_to(crandn(rng, (s.nt, 1, 1)), s.image_shape).copy()
    v = crandn(rng, (2,) + s.image_shape)
    p = ALL_ON.replace(alpha2=0.0)
    assert not np.any(objective.grad_v(flat, v, None, s, p))
    q = ALL_ON.replace(alpha3=0.0)
    g1 = objective.grad_v(crandn(rng, s.image_shape), v, None, s, q)
    g2 = objective.grad_v(crandn(rng, s.image_shape), v, None, s, q)
    assert np.array_equal(g1, g2)


def test_toy_minimizer_gradient_vanishes():
    # one free pixel on a 1x2x2 grid, others fixed; zoom search for the minimizer
    s = mri.MriSystem(CoilMaps(np.ones((1, 2, 2))), SamplingMask.full(1, 2))
    base = np.array([[[0.3 + 0.1j, -0.2j], [0.5, 0.1 - 0.4j]]])
    y = mri.forward(s, np.array([[[1.0 - 0.5j, 0.2], [0.0, 0.3j]]]))
    p = ModelParams(alpha1=0.2, eps1=0.05)
    z = np.zeros((2, 1, 2, 2))

    def F(c):
        r = base.copy()
        r[0, 0, 0] = c
        return objective.objective_value(r, z, y, s, p)

    c, width = 0j, 4.0
    grid = np.linspace(-1, 1, 21)
    for _ in range(80):
        cands = [c + width * (a + 1j * b) for a in grid for b in grid]
        c = min(cands, key=F)
        width /= 4
    r = base.copy()
    r[0, 0, 0] = c
    g = objective.grad_rho(r, z, y, s, p)
    assert abs(g[0, 0, 0]) < 1e-8


# --- convexity and nonnegativity ----------------------------------------------

@given(st.integers(0, 10**6))
def test_partial_convexity_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    s = small_system(rng, nt=2, nc=1, nx=4, ny=4)
    y = mri.forward(s, crandn(rng, s.image_shape))
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    F = lambda r, vv: objective.objective_value(r, vv, y, s, ALL_ON)  # noqa: E731
    a, b = crandn(rng, s.image_shape), crandn(rng, s.image_shape)
    assert F((a + b) / 2, v) <= (F(a, v) + F(b, v)) / 2 + 1e-10
    va, vb = crandn(rng, v.shape), crandn(rng, v.shape)
    assert F(rho, (va + vb) / 2) <= (F(rho, va) + F(rho, vb)) / 2 + 1e-10
    assert F(rho, v) >= 0


# --- Lipschitz ---------------------------------------------------------------

def test_lipschitz_unitary_case():
    s = mri.MriSystem(CoilMaps(np.ones((1, 6, 6))), SamplingMask.full(2, 6))
    L = objective.lipschitz_rho(s, np.zeros((2, 2, 6, 6)), ModelParams())
    assert L / objective.SAFETY == pytest.approx(2.0, rel=0.05)


def test_lipschitz_all_alpha_zero(rng):
    s = small_system(rng)
    L = objective.lipschitz_rho(s, np.zeros((2,) + s.image_shape), ModelParams())
    assert L == pytest.approx(objective.SAFETY * 2 * objective.data_norm_sq(s), rel=1e-12)


def _grad_variation_ok(grad, L, shape, rng, pairs=100):
    for _ in range(pairs):
        a, b = crandn(rng, shape), crandn(rng, shape)
        if rng.random() < 0.5:
            b = a + 1e-2 * crandn(rng, shape)
        assert np.linalg.norm(grad(a) - grad(b)) <= L * np.linalg.norm(a - b) * (1 + 1e-12)


def test_lipschitz_rho_bounds_gradient_variation(rng):
    s = small_system(rng)
    v = crandn(rng, (2,) + s.image_shape)
    y = mri.forward(s, crandn(rng, s.image_shape))
    L = objective.lipschitz_rho(s, v, ALL_ON)
    _grad_variation_ok(objective.rho_gradient_oracle(y, s, v, ALL_ON), L, s.image_shape, rng)


def test_lipschitz_v_bounds_gradient_variation(rng):
    rho = crandn(rng, (2, 6, 6))
    L = objective.lipschitz_v(rho, ALL_ON)
    _grad_variation_ok(objective.v_gradient_oracle(rho, ALL_ON), L, (2, 2, 6, 6), rng)


def test_lipschitz_v_degenerate_and_reduction(rng):
    flat = np.ones((2, 5, 5), complex)
    assert objective.lipschitz_v(flat, ModelParams(alpha3=1.0)) == objective.L_FLOOR
    p = ModelParams(alpha2=0.4, eps2=0.1)
    from cineflow import diffops
    expect = objective.SAFETY * 4.0 * diffops.forward_grad_norm_sq(5, 5)
    assert objective.lipschitz_v(crandn(rng, (2, 5, 5)), p) == pytest.approx(expect, rel=1e-12)
    assert objective.lipschitz_v(flat, p) == pytest.approx(expect, rel=1e-12)
