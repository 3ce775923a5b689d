"""Complex optical-flow residual and its partial Jacobian transposes.

With ``rho = rho1 + i rho2`` and ``v = v1 + i v2`` (each a 2-vector field) the
residual is returned as one complex field ``r1 + i r2`` where

    r1 = d_t rho1 + <v1, grad rho1> + <v2, grad rho2>
    r2 = d_t rho2 + <v2, grad rho1> - <v1, grad rho2>

which is ``d_t rho + sum_k v_k * conj(d_k rho)``. Time derivatives are forward
differences, spatial ones central differences (see :mod:`cineflow.diffops`).

Velocities are arrays of shape ``(2, Nt, Nx, Ny)``. The map is real-bilinear in
(rho, v); transposes are taken w.r.t. the real inner product
``<a, b> = Re sum a * conj(b)``.

Besides the coupled model, two ablation couplings are available:

``decoupled``   real and imaginary parts move with independent real velocities
                ``Re v`` and ``Im v``
``shared``      both parts move with one real velocity ``Re v``; ``Im v`` unused
"""

from __future__ import annotations

import numpy as np

from . import diffops

FLOW_MODES = ("complex", "decoupled", "shared")


def _check(rho, v):
    if v.shape != (2,) + rho.shape:
        raise ValueError(f"velocity shape {v.shape} does not match image shape {rho.shape}")


def _check_mode(mode):
    if mode not in FLOW_MODES:
        raise ValueError(f"unknown flow mode {mode!r}, expected one of {FLOW_MODES}")


def transport(v, g, mode):
    # pointwise sum_k v_k (.) g_k according to the coupling mode
    if mode == "complex":
        return np.sum(v * np.conj(g), axis=0)
    if mode == "decoupled":
        return np.sum(v.real * g.real + 1j * (v.imag * g.imag), axis=0)
    return np.sum(v.real * g, axis=0)


def flow_residual(rho, v, mode="complex"):
    """Optical-flow residual ``M(rho, v)`` as a complex field ``r1 + i r2``."""
    rho = np.asarray(rho)
    v = np.asarray(v)
    _check(rho, v)
    _check_mode(mode)
    g = diffops.central_grad(rho)
    return diffops.d_forward_time(rho) + transport(v, g, mode)


def apply_rho_jacobian(v, rho, mode="complex"):
    """The linear map ``rho -> M(rho, v)`` (identical to :func:`flow_residual`)."""
    return flow_residual(rho, v, mode)


def rho_jacobian_adjoint(v, w, mode="complex"):
    """Transpose of ``rho -> M(rho, v)`` applied to the residual-space field ``w``."""
    v = np.asarray(v)
    w = np.asarray(w)
    _check(w, v)
    _check_mode(mode)
    if mode == "complex":
        z = v * np.conj(w)
    elif mode == "decoupled":
        z = v.real * w.real + 1j * (v.imag * w.imag)
    else:
        z = v.real * w
    t_part = diffops.adjoint_of(diffops.StencilKind.FORWARD_TIME, w)
    return t_part + diffops.central_grad_adj(z)


def apply_v_jacobian(rho, v, mode="complex"):
    """The linear map ``v -> M(rho, v) - d_t rho``."""
    rho = np.asarray(rho)
    _check(rho, v)
    g = diffops.central_grad(rho)
    return transport(np.asarray(v), g, mode)


def v_jacobian_adjoint(rho, w, mode="complex", grad_rho=None):
    """Transpose of ``v -> M(rho, v)`` applied to ``w``; returns shape ``(2, Nt, Nx, Ny)``.

    ``grad_rho`` may pass a precomputed central gradient of ``rho``.
    """
    rho = np.asarray(rho)
    w = np.asarray(w)
    if w.shape != rho.shape:
        raise ValueError(f"residual shape {w.shape} does not match image shape {rho.shape}")
    _check_mode(mode)
    g = diffops.central_grad(rho) if grad_rho is None else grad_rho
    if mode == "complex":
        return g * w[None]
    if mode == "decoupled":
        return g.real * w.real[None] + 1j * (g.imag * w.imag[None])
    return (np.conj(g) * w[None]).real.astype(np.complex128)
