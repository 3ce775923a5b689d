"""Finite-difference stencils on ``(..., Nt, Nx, Ny)`` grids and their transposes.

Conventions (Neumann boundaries throughout):

* forward differences: ``out[i] = u[i+1] - u[i]``, last entry 0
* central differences: ``out[i] = (u[i+1] - u[i-1]) / 2`` with replicated
  ghost cells, i.e. half-weight one-sided differences at both edges

All operators are real-linear and act on real and complex arrays alike. The
last three axes are always (t, x, y); leading axes are batch axes.
"""

from __future__ import annotations

import enum
import math
from functools import lru_cache

import numpy as np
from scipy import ndimage

AXIS_T, AXIS_X, AXIS_Y = -3, -2, -1


class StencilKind(enum.Enum):
    FORWARD_TIME = "forward_time"
    CENTRAL_X = "central_x"
    CENTRAL_Y = "central_y"
    FORWARD_X = "forward_x"
    FORWARD_Y = "forward_y"


def _forward(u, axis):
    p = np.moveaxis(u, axis, 0)
    out = np.empty_like(p)
    np.subtract(p[1:], p[:-1], out=out[:-1])
    out[-1] = 0
    return np.moveaxis(out, 0, axis)


def _forward_adj(w, axis):
    # transpose of _forward: out[i] = w[i-1] - w[i] on the interior,
    # out[0] = -w[0], out[n-1] = w[n-2]
    p = np.moveaxis(w, axis, 0)
    out = np.empty_like(p)
    n = p.shape[0]
    if n == 1:
        out[0] = 0
        return np.moveaxis(out, 0, axis)
    out[0] = -p[0]
    np.subtract(p[:n - 2], p[1:n - 1], out=out[1:n - 1])
    out[n - 1] = p[n - 2]
    return np.moveaxis(out, 0, axis)


def _central(u, axis):
    p = np.moveaxis(u, axis, 0)
    out = np.empty_like(p)
    out[1:-1] = 0.5 * (p[2:] - p[:-2])
    out[0] = 0.5 * (p[1] - p[0])
    out[-1] = 0.5 * (p[-1] - p[-2])
    return np.moveaxis(out, 0, axis)


def _central_adj(w, axis):
    # central = 0.5 * (S+ - S-) @ P with P the edge-replicating pad
    p = np.moveaxis(w, axis, 0)
    n = p.shape[0]
    z = np.zeros((n + 2,) + p.shape[1:], dtype=p.dtype)
    z[2:] += 0.5 * p
    z[:-2] -= 0.5 * p
    out = z[1:-1].copy()
    out[0] += z[0]
    out[-1] += z[-1]
    return np.moveaxis(out, 0, axis)


def d_forward_time(u):
    return _forward(u, AXIS_T)


def d_forward_x(u):
    return _forward(u, AXIS_X)


def d_forward_y(u):
    return _forward(u, AXIS_Y)


def d_central_x(u):
    return _central(u, AXIS_X)


def d_central_y(u):
    return _central(u, AXIS_Y)


_FORWARD_MAPS = {
    StencilKind.FORWARD_TIME: d_forward_time,
    StencilKind.CENTRAL_X: d_central_x,
    StencilKind.CENTRAL_Y: d_central_y,
    StencilKind.FORWARD_X: d_forward_x,
    StencilKind.FORWARD_Y: d_forward_y,
}

_ADJOINT_MAPS = {
    StencilKind.FORWARD_TIME: lambda w: _forward_adj(w, AXIS_T),
    StencilKind.CENTRAL_X: lambda w: _central_adj(w, AXIS_X),
    StencilKind.CENTRAL_Y: lambda w: _central_adj(w, AXIS_Y),
    StencilKind.FORWARD_X: lambda w: _forward_adj(w, AXIS_X),
    StencilKind.FORWARD_Y: lambda w: _forward_adj(w, AXIS_Y),
}


def apply(kind: StencilKind, u):
    return _FORWARD_MAPS[kind](u)


def adjoint_of(kind: StencilKind, w):
    """Exact transpose of the stencil ``kind`` applied to ``w``."""
    return _ADJOINT_MAPS[kind](w)


def forward_grad(u):
    """Forward-difference spatial gradient, stacked as ``(2, ...)``."""
    return np.stack([d_forward_x(u), d_forward_y(u)])


def forward_grad_adj(g):
    return _forward_adj(g[0], AXIS_X) + _forward_adj(g[1], AXIS_Y)


def central_grad(u):
    return np.stack([d_central_x(u), d_central_y(u)])


def central_grad_adj(g):
    return _central_adj(g[0], AXIS_X) + _central_adj(g[1], AXIS_Y)


@lru_cache(maxsize=32)
def forward_grad_norm_sq(nx, ny, n_iter=100):
    """Power-iteration estimate of the largest eigenvalue of ``DᵀD`` on an ``nx×ny`` grid."""
    rng = np.random.default_rng(0)
    u = rng.standard_normal((1, nx, ny))
    lam = 0.0
    for _ in range(n_iter):
        w = forward_grad_adj(forward_grad(u))
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        u = w / lam
    return lam


def gaussian_smooth(u, sigma, spatial_only=True):
    """Separable Gaussian smoothing with replicate boundaries.

    Parameters
    ----------
    u : ndarray
        Real or complex array whose last three axes are (t, x, y).
    sigma : float
        Standard deviation in pixels (frames for the time axis). ``0`` is the
        identity.
    spatial_only : bool
        Smooth only along x and y. If False the time axis is smoothed too.

    The kernel is truncated at radius ``ceil(4 sigma)`` and renormalized.
    """
    axes = (AXIS_X, AXIS_Y) if spatial_only else (AXIS_T, AXIS_X, AXIS_Y)
    out = u
    for ax in axes:
        out = smooth_axis(out, sigma, ax)
    return np.array(out, copy=True) if out is u else out


def smooth_axis(u, sigma, axis):
    """1-D Gaussian smoothing along ``axis`` (replicate edges, radius ``ceil(4 sigma)``)."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return u
    if np.iscomplexobj(u):
        return smooth_axis(u.real, sigma, axis) + 1j * smooth_axis(u.imag, sigma, axis)
    radius = int(math.ceil(4.0 * sigma))
    return ndimage.gaussian_filter1d(np.asarray(u, dtype=np.float64), sigma, axis=axis,
                                     mode="nearest", radius=radius)
