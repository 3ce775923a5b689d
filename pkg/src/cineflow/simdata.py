"""Synthetic cine data: phantom, smooth velocities, advection, coils, measurements.

The ground-truth sequence is produced by integrating the complex optical-flow
equation from a single phantom frame, using the same central-difference
operators the reconstruction penalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import diffops, mri, solver
from .grid import CoilMaps, KSpaceData
from .motion import FLOW_MODES, transport


class AdvectionError(RuntimeError):
    pass


class NoDynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    nt: int = 8
    nx: int = 48
    ny: int = 48
    rng_seed: int = 0
    edge_width: float = 1.0  # pixels
    chamber_radius: float = 0.28  # fraction of half field of view
    phase_span: float = 2.0  # approximate phase range (radians) across the support

    @property
    def dims(self):
        return (self.nt, self.nx, self.ny)


@dataclass(frozen=True)
class NoiseSpec:
    eta: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


BODY_AXES = (0.85, 0.75)


def _coords(nx, ny):
    x = np.linspace(-1.0, 1.0, nx)
    y = np.linspace(-1.0, 1.0, ny)
    return np.meshgrid(x, y, indexing="ij")


def _soft_ellipse(X, Y, cx, cy, ax, ay, width):
    r = np.sqrt(((X - cx) / ax) ** 2 + ((Y - cy) / ay) ** 2)
    # width is in normalized units of the ellipse level set
    return 0.5 * (1.0 - np.tanh((r - 1.0) / width))


def phantom_layout(spec: PhantomSpec):
    """Seeded geometry shared by the phantom and the cardiac velocity pattern."""
    rng = np.random.default_rng(spec.rng_seed)
    jitter = rng.uniform(-0.05, 0.05, size=2)
    chamber = (0.05 + jitter[0], -0.05 + jitter[1], spec.chamber_radius, spec.chamber_radius * 1.15)
    return rng, chamber


def phase_map(spec: PhantomSpec):
    """Smooth low-order phase (radians) on the image grid."""
    rng = np.random.default_rng(spec.rng_seed + 7919)
    X, Y = _coords(spec.nx, spec.ny)
    a, b = rng.uniform(0.6, 1.0, size=2) * rng.choice([-1.0, 1.0], size=2)
    c, d = rng.uniform(-0.3, 0.3, size=2)
    phi = a * X + b * Y + c * X * Y + d * (X ** 2 - Y ** 2)
    # span measured over the body support, where the phase is visible
    body = _soft_ellipse(X, Y, 0.0, 0.0, BODY_AXES[0], BODY_AXES[1], 1e-3) > 0.5
    span = phi[body].max() - phi[body].min()
    return phi * (spec.phase_span / span)


def make_phantom_frame0(spec: PhantomSpec):
    """First frame: smooth-edged ellipses times a smooth phase, max magnitude 1."""
    rng, (cx, cy, ax, ay) = phantom_layout(spec)
    X, Y = _coords(spec.nx, spec.ny)
    w = 2.0 * spec.edge_width / spec.nx / max(ax, 0.1)
    mag = 0.30 * _soft_ellipse(X, Y, 0.0, 0.0, *BODY_AXES, 2.0 * spec.edge_width / spec.nx / 0.8)
    # myocardium-like ring around the chamber, then the bright blood pool
    mag += 0.25 * _soft_ellipse(X, Y, cx, cy, ax * 1.45, ay * 1.4, w / 1.45)
    mag -= 0.25 * _soft_ellipse(X, Y, cx, cy, ax, ay, w)
    mag += 0.90 * _soft_ellipse(X, Y, cx, cy, ax, ay, w)
    # static background structures
    for _ in range(3):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.55, 0.65)
        bx, by = rad * np.cos(ang), rad * np.sin(ang) * 0.85
        size = rng.uniform(0.08, 0.13)
        mag += rng.uniform(0.3, 0.5) * _soft_ellipse(X, Y, bx, by, size, size * 1.2,
                                                     2.0 * spec.edge_width / spec.nx / size)
    mag = np.clip(mag, 0.0, None)
    mag /= mag.max()
    return mag * np.exp(1j * phase_map(spec))


def smooth_field(raw, sigma_space=2.0, sigma_time=1.0):
    """Gaussian smoothing in space (sigma_space px) and time (sigma_time frames)."""
    out = diffops.gaussian_smooth(raw, sigma_space, spatial_only=True)
    return diffops.smooth_axis(out, sigma_time, diffops.AXIS_T)


def make_velocity_field(dims, pattern="cardiac", rng_seed=0, *, speed=0.5, phase=None,
                        center=(0.0, 0.0), radius=0.3, sigma_space=2.0, sigma_time=1.0,
                        max_disp=0.5):
    """Smooth velocity field of shape ``(2, Nt, Nx, Ny)``.

    Parameters
    ----------
    pattern : {"cardiac", "translation", "zero"}
        ``cardiac`` is a periodic radial contraction/expansion around
        ``center`` (normalized coordinates) with a small seeded perturbation;
        ``translation`` is a constant real velocity ``(speed, 0)``.
    phase : ndarray, optional
        Image phase ``phi``. The cardiac field is rotated by ``exp(2 i phi)``,
        which is the complex velocity that moves an image of locally constant
        phase ``phi`` rigidly with the real field.
    max_disp : float
        Cap on ``|v|`` in pixels per frame.
    """
    nt, nx, ny = dims
    if pattern == "zero":
        return np.zeros((2, nt, nx, ny), dtype=np.complex128)
    if pattern == "translation":
        s = float(np.clip(speed, -max_disp, max_disp))
        v = np.zeros((2, nt, nx, ny), dtype=np.complex128)
        v[0] = s
        return v
    if pattern != "cardiac":
        raise ValueError(f"unknown velocity pattern {pattern!r}")

    rng = np.random.default_rng(rng_seed)
    X, Y = _coords(nx, ny)
    dx, dy = X - center[0], Y - center[1]
    window = np.exp(-(dx ** 2 + dy ** 2) / (2 * (1.4 * radius) ** 2))
    # expansion then contraction over one cycle, at rest on the last frame
    amp = np.sin(2 * np.pi * ((np.arange(nt) + 1) % nt) / nt)
    raw = np.empty((2, nt, nx, ny))
    raw[0] = (dx * window)[None] / radius
    raw[1] = (dy * window)[None] / radius
    raw = raw + 0.15 * rng.standard_normal(raw.shape) * window
    v = smooth_field(raw, sigma_space, sigma_time) * amp[None, :, None, None]
    peak = np.max(np.abs(v))
    if peak > 0:
        v *= min(speed, max_disp) / peak
    v = v.astype(np.complex128)
    if phase is not None:
        v = v * np.exp(2j * np.asarray(phase))[None, None]
    return v


def advect(frame0, v, substeps=8, mode="complex"):
    """Integrate the complex optical-flow equation forward from ``frame0``.

    Each frame interval uses the velocity of its starting frame and ``substeps``
    explicit Euler steps of size ``1 / substeps`` with central differences.
    """
    if substeps < 1:
        raise ValueError("substeps must be ≥ 1")
    if mode not in FLOW_MODES:
        raise ValueError(f"unknown flow mode {mode!r}")
    frame0 = np.asarray(frame0, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    nt = v.shape[1]
    out = np.empty((nt,) + frame0.shape, dtype=np.complex128)
    out[0] = frame0
    bound = 10.0 * max(np.max(np.abs(frame0)), 1e-300)
    dtau = 1.0 / substeps
    rho = frame0.copy()
    for t in range(nt - 1):
        vt = v[:, t]
        for _ in range(substeps):
            g = diffops.central_grad(rho)
            rho = rho - dtau * transport(vt, g, mode)
        if not np.all(np.isfinite(rho)) or np.max(np.abs(rho)) > bound:
            raise AdvectionError("advection unstable, increase substeps")
        out[t + 1] = rho
    return out


def make_coil_maps(nc, dims, rng_seed=0, width=0.9):
    """Smooth complex coil sensitivities normalized to unit root-sum-of-squares.

    Coil centers sit evenly around the field-of-view border; each map has a
    Gaussian magnitude profile and a gentle linear phase.
    """
    nx, ny = dims[-2:]
    if nc < 1:
        raise ValueError("Nc must be ≥ 1")
    if nc == 1:
        return CoilMaps(np.ones((1, nx, ny), dtype=np.complex128))
    rng = np.random.default_rng(rng_seed)
    X, Y = _coords(nx, ny)
    offset = rng.uniform(0, 2 * np.pi / nc)
    maps = np.empty((nc, nx, ny), dtype=np.complex128)
    for i in range(nc):
        ang = offset + 2 * np.pi * i / nc
        cx, cy = 1.2 * np.cos(ang), 1.2 * np.sin(ang)
        mag = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width ** 2))
        kx, ky = rng.uniform(-0.5, 0.5, size=2)
        maps[i] = mag * np.exp(1j * (kx * X + ky * Y + rng.uniform(0, 2 * np.pi)))
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / rss[None])


def synthesize_measurements(rho_gt, system: mri.MriSystem, noise: NoiseSpec):
    """``y = A rho_gt + n`` on sampled rows; complex noise std ``eta * peak``.

    ``peak`` is the largest k-space magnitude of the fully sampled forward model.
    """
    rho_gt = np.asarray(rho_gt)
    clean = mri.forward(system, rho_gt)
    if noise.eta == 0:
        return KSpaceData(clean, system.mask)
    full = system if system.mask.is_full else system.with_mask(
        type(system.mask).full(system.nt, system.mask.nx_full))
    peak = float(np.max(np.abs(mri.forward(full, rho_gt))))
    rng = np.random.default_rng(noise.rng_seed)
    g = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    y = clean + noise.eta * peak / np.sqrt(2.0) * g
    return KSpaceData(y * system._rows, system.mask)


def _disk(radius):
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius ** 2


def dynamic_mask(rho_gt, tau=0.2, dilate_px=3):
    """Pixels whose magnitude varies over time, dilated by a disk of ``dilate_px``."""
    rho_gt = np.asarray(rho_gt)
    if rho_gt.shape[0] < 2:
        raise ValueError("dynamic mask needs at least two frames")
    std = np.std(np.abs(rho_gt), axis=0)
    top = std.max()
    if top <= 1e-12 * max(float(np.max(np.abs(rho_gt))), np.finfo(float).tiny):
        raise NoDynamicsError("no dynamic content")
    mask = std > tau * top
    if dilate_px > 0:
        mask = ndimage.binary_dilation(mask, structure=_disk(dilate_px))
    return mask


def dynamic_ground_truth(y_full, system, mp, sp, boost=10.0):
    """Reference sequence and velocities from a strongly motion-regularized OF solve."""
    if not system.mask.is_full:
        raise ValueError("dynamic ground truth requires fully sampled data")
    rho, v, _ = solver.reconstruct(y_full, system, solver.ModelKind.OF,
                                   mp.replace(alpha3=mp.alpha3 * boost), sp)
    return rho, v
