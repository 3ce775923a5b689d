"""Joint objective ``F(rho, v)``, its partial gradients and step-size bounds.

    F = sum_t ||A_t rho_t - y_t||^2
        + a1 [H_e1(grad rho1) + H_e1(grad rho2)]
        + a2 [H_e2(grad v1x) + H_e2(grad v1y) + H_e2(grad v2x) + H_e2(grad v2y)]
        + a3 H_e3(M(rho, v))

``grad`` in the image and velocity priors is the forward-difference spatial
gradient; each Huber term sums over sites of 2-vectors. For the motion term
the site vector is ``(r1, r2)``, the real and imaginary residual.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffops, motion, mri


@dataclass(frozen=True)
class ModelParams:
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    eps1: float = 0.01
    eps2: float = 0.01
    eps3: float = 0.01
    flow_mode: str = "complex"

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("eps1", "eps2", "eps3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.flow_mode not in motion.FLOW_MODES:
            raise ValueError(f"unknown flow mode {self.flow_mode!r}")

    def replace(self, **kw):
        return replace(self, **kw)


def huber_value_grad(x, eps):
    """Summed Huber loss of site vectors and its gradient.

    Parameters
    ----------
    x : ndarray
        Real array of shape ``(d, ...)``; ``x[:, site]`` is one site vector.
    eps : float
        Transition point, must be positive.

    Returns
    -------
    value : float
        ``sum_sites h(x_site)`` with ``h(z) = |z|^2 / (2 eps)`` for
        ``|z| <= eps`` and ``|z| - eps / 2`` otherwise.
    grad : ndarray
        ``x / max(|x_site|, eps)`` per site.
    """
    if not eps > 0:
        raise ValueError(f"Huber eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.sum(x * x, axis=0))
    quad = norm <= eps
    value = float(np.sum(np.where(quad, norm * norm / (2.0 * eps), norm - 0.5 * eps)))
    grad = x / np.maximum(norm, eps)[None]
    return value, grad


def huber_grad(x, eps):
    """Gradient part of :func:`huber_value_grad` only."""
    norm = np.sqrt(np.sum(x * x, axis=0))
    return x / np.maximum(norm, eps)[None]


def huber_parts(g, eps, with_value=True):
    """Huber of the real and imaginary parts of a complex gradient field, separately.

    ``g`` has shape ``(2, ...)`` with the spatial direction first. The site
    vectors are ``(Re g[0], Re g[1])`` and ``(Im g[0], Im g[1])``; the two
    Huber sums are added. Returns ``(value, grad)`` with the gradient packed
    complex, or just the gradient if ``with_value`` is False.
    """
    re, im = g.real, g.imag
    nr = np.sqrt(re[0] * re[0] + re[1] * re[1])
    ni = np.sqrt(im[0] * im[0] + im[1] * im[1])
    grad = re / np.maximum(nr, eps) + 1j * (im / np.maximum(ni, eps))
    if not with_value:
        return grad
    value = 0.0
    for n in (nr, ni):
        value += float(np.sum(np.where(n <= eps, n * n / (2.0 * eps), n - 0.5 * eps)))
    return value, grad


def huber_complex(r, eps, with_value=True):
    """Huber with site vector ``(Re r, Im r)``; gradient packed complex."""
    n = np.abs(r)
    grad = r / np.maximum(n, eps)
    if not with_value:
        return grad
    return float(np.sum(np.where(n <= eps, n * n / (2.0 * eps), n - 0.5 * eps))), grad


def image_prior(rho, eps):
    """``H(grad rho1) + H(grad rho2)`` and its gradient w.r.t. rho (complex-packed)."""
    value, hg = huber_parts(diffops.forward_grad(rho), eps)
    return value, diffops.forward_grad_adj(hg)


def velocity_prior(v, eps):
    """Sum of the four Huber terms on the velocity components."""
    value, hg = huber_parts(diffops.forward_grad(v), eps)  # (2 spatial, 2 components, Nt, Nx, Ny)
    return value, diffops.forward_grad_adj(hg)


def motion_prior(rho, v, eps, mode="complex"):
    """``H(M(rho, v))``, its Huber gradient in residual space, and the residual."""
    r = motion.flow_residual(rho, v, mode)
    return huber_complex(r, eps)


def _y_array(y):
    return np.asarray(getattr(y, "samples", y))


def objective_terms(rho, v, y, system, params: ModelParams):
    """Individual unweighted terms ``(data, R1, R2, R3)``."""
    data, _ = mri.data_term_and_grad(system, rho, _y_array(y))
    r1, _ = image_prior(rho, params.eps1)
    r2, _ = velocity_prior(v, params.eps2)
    r3, _ = motion_prior(rho, v, params.eps3, params.flow_mode)
    return data, r1, r2, r3


def objective_value(rho, v, y, system, params: ModelParams):
    data, r1, r2, r3 = objective_terms(rho, v, y, system, params)
    return data + params.alpha1 * r1 + params.alpha2 * r2 + params.alpha3 * r3


def value_and_grad_rho(rho, v, y, system, params: ModelParams):
    value, grad = mri.data_term_and_grad(system, rho, _y_array(y))
    if params.alpha1:
        r1, g1 = image_prior(rho, params.eps1)
        value += params.alpha1 * r1
        grad = grad + params.alpha1 * g1
    if params.alpha3:
        r3, hg = motion_prior(rho, v, params.eps3, params.flow_mode)
        value += params.alpha3 * r3
        grad = grad + params.alpha3 * motion.rho_jacobian_adjoint(v, hg, params.flow_mode)
    return value, grad


def grad_rho(rho, v, y, system, params: ModelParams):
    """Gradient of ``F`` w.r.t. ``rho`` (real and imaginary parts packed complex)."""
    return value_and_grad_rho(rho, v, y, system, params)[1]


def value_and_grad_v(rho, v, params: ModelParams, grad_rho_central=None):
    """v-dependent part of ``F`` (priors R2, R3) and its gradient w.r.t. ``v``."""
    value = 0.0
    grad = np.zeros_like(v, dtype=np.complex128)
    if params.alpha2:
        r2, g2 = velocity_prior(v, params.eps2)
        value += params.alpha2 * r2
        grad += params.alpha2 * g2
    if params.alpha3:
        r3, hg = motion_prior(rho, v, params.eps3, params.flow_mode)
        value += params.alpha3 * r3
        grad += params.alpha3 * motion.v_jacobian_adjoint(
            rho, hg, params.flow_mode, grad_rho=grad_rho_central
        )
    return value, grad


def grad_v(rho, v, y, system, params: ModelParams):
    """Gradient of ``F`` w.r.t. ``v``; the data term does not depend on ``v``."""
    return value_and_grad_v(rho, v, params)[1]


def rho_gradient_oracle(y, system, v, params: ModelParams, ahy=None):
    """Closure ``rho -> grad_rho F(rho, v)`` for iterative solvers.

    Uses the shift-free normal operator and a precomputed ``A^H y``; agrees
    with :func:`grad_rho` to rounding.
    """
    if ahy is None:
        ahy = mri.adjoint(system, _y_array(y))
    a1, a3, mode = params.alpha1, params.alpha3, params.flow_mode

    def grad(rho):
        g = 2.0 * (mri.normal(system, rho) - ahy)
        if a1:
            hg = huber_parts(diffops.forward_grad(rho), params.eps1, with_value=False)
            g += a1 * diffops.forward_grad_adj(hg)
        if a3:
            hg = huber_complex(motion.flow_residual(rho, v, mode), params.eps3, with_value=False)
            g += a3 * motion.rho_jacobian_adjoint(v, hg, mode)
        return g

    return grad


def v_gradient_oracle(rho, params: ModelParams):
    """Closure ``v -> grad_v F(rho, v)`` with the image gradient precomputed."""
    a2, a3, mode = params.alpha2, params.alpha3, params.flow_mode
    g_rho = diffops.central_grad(rho)
    dt_rho = diffops.d_forward_time(rho)

    def grad(v):
        g = np.zeros(v.shape, dtype=np.complex128)
        if a2:
            hg = huber_parts(diffops.forward_grad(v), params.eps2, with_value=False)
            g += a2 * diffops.forward_grad_adj(hg)
        if a3:
            hg = huber_complex(dt_rho + motion.transport(v, g_rho, mode), params.eps3, with_value=False)
            g += a3 * motion.v_jacobian_adjoint(rho, hg, mode, grad_rho=g_rho)
        return g

    return grad


# ---------------------------------------------------------------------------
# Lipschitz bounds

LIPSCHITZ_ITERS = 50
SAFETY = 1.1
L_FLOOR = 1e-8


def power_iteration(normal_op, shape, n_iter=LIPSCHITZ_ITERS, seed=0, complex_=True):
    """Largest eigenvalue of a symmetric PSD (real-linear) operator."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    if complex_:
        x = x + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = normal_op(x)
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return lam


def data_norm_sq(system, n_iter=LIPSCHITZ_ITERS):
    """``lambda_max(A^H A)`` by power iteration."""
    return power_iteration(lambda x: mri.normal(system, x), system.image_shape, n_iter)


def lipschitz_rho(system, v, params: ModelParams, probe_dims=None, n_iter=LIPSCHITZ_ITERS,
                  data_lambda=None):
    """Upper bound on the Lipschitz constant of ``grad_rho F(., v)``.

    ``data_lambda`` may carry a precomputed ``lambda_max(A^H A)``.
    """
    dims = tuple(probe_dims) if probe_dims is not None else system.image_shape
    lam_a = data_norm_sq(system, n_iter) if data_lambda is None else data_lambda
    L = 2.0 * lam_a
    if params.alpha1:
        L += params.alpha1 / params.eps1 * diffops.forward_grad_norm_sq(dims[1], dims[2])
    if params.alpha3:
        mode = params.flow_mode

        def jtj(x):
            return motion.rho_jacobian_adjoint(v, motion.apply_rho_jacobian(v, x, mode), mode)

        L += params.alpha3 / params.eps3 * power_iteration(jtj, dims, n_iter)
    return max(SAFETY * L, L_FLOOR)


def lipschitz_v(rho, params: ModelParams, probe_dims=None, n_iter=LIPSCHITZ_ITERS):
    """Upper bound on the Lipschitz constant of ``grad_v F(rho, .)``."""
    dims = tuple(probe_dims) if probe_dims is not None else rho.shape
    L = 0.0
    if params.alpha2:
        L += params.alpha2 / params.eps2 * diffops.forward_grad_norm_sq(dims[1], dims[2])
    if params.alpha3:
        mode = params.flow_mode
        g = diffops.central_grad(rho)

        def jtj(x):
            r = motion.apply_v_jacobian(rho, x, mode)
            return motion.v_jacobian_adjoint(rho, r, mode, grad_rho=g)

        L += params.alpha3 / params.eps3 * power_iteration(jtj, (2,) + tuple(dims), n_iter)
    return max(SAFETY * L, L_FLOOR)
