"""Multi-coil Cartesian MRI forward model with row undersampling.

``A_t rho_t`` for coil ``i`` is: multiply by the coil map, centered unitary 2-D
DFT, zero the phase-encoding rows (x axis) not sampled at frame ``t``.
The zero-frequency sample sits at ``(Nx // 2, Ny // 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .grid import CoilMaps, KSpaceData, SamplingMask


class MaskError(ValueError):
    pass


def fft2c(x):
    return sfft.fftshift(
        sfft.fft2(sfft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def ifft2c(k):
    return sfft.fftshift(
        sfft.ifft2(sfft.ifftshift(k, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


@dataclass(frozen=True)
class MriSystem:
    coils: CoilMaps
    mask: SamplingMask

    def __post_init__(self):
        if self.mask.nx_full != self.coils.maps.shape[1]:
            raise ValueError(
                f"mask covers {self.mask.nx_full} rows but coil maps have Nx={self.coils.maps.shape[1]}"
            )
        # cached (Nt, 1, Nx, 1) row selector for broadcasting over coils and readout
        sel = self.mask.as_array()[:, None, :, None]
        object.__setattr__(self, "_rows", sel)
        # same selector in uncentered FFT ordering, for the shift-free normal operator
        object.__setattr__(self, "_rows_unshifted", sfft.ifftshift(sel, axes=-2))
        object.__setattr__(self, "_maps_conj", np.conj(self.coils.maps))

    @property
    def nt(self):
        return self.mask.nt

    @property
    def image_shape(self):
        return (self.mask.nt,) + self.coils.maps.shape[1:]

    @property
    def kspace_shape(self):
        nc, nx, ny = self.coils.maps.shape
        return (self.mask.nt, nc, nx, ny)

    def with_mask(self, mask):
        return MriSystem(self.coils, mask)

    def check_image(self, rho):
        if rho.shape != self.image_shape:
            raise ValueError(f"image shape {rho.shape} does not match system {self.image_shape}")

    def check_kspace(self, y):
        if y.shape != self.kspace_shape:
            raise ValueError(f"k-space shape {y.shape} does not match system {self.kspace_shape}")


def forward(system: MriSystem, rho):
    """Apply ``A`` to an image sequence; returns zero-filled samples ``(Nt, Nc, Nx, Ny)``."""
    rho = np.asarray(rho)
    system.check_image(rho)
    k = fft2c(rho[:, None] * system.coils.maps[None])
    return k * system._rows


def adjoint(system: MriSystem, y):
    """Apply ``A^H``: zero-fill, inverse DFT, conjugate coil weighting, coil sum."""
    y = np.asarray(y.samples if isinstance(y, KSpaceData) else y)
    system.check_kspace(y)
    img = ifft2c(y * system._rows)
    return np.sum(img * np.conj(system.coils.maps)[None], axis=1)


def normal(system: MriSystem, rho):
    """``A^H A rho`` using 1-D transforms along the phase-encoding axis only.

    The readout transform cancels because whole rows are sampled, and the
    centering shifts cancel because the remaining operator is circulant in x.
    """
    rho = np.asarray(rho)
    system.check_image(rho)
    z = sfft.fft(rho[:, None] * system.coils.maps[None], axis=-2, overwrite_x=True)
    z *= system._rows_unshifted
    z = sfft.ifft(z, axis=-2, overwrite_x=True)
    z *= system._maps_conj
    return z.sum(axis=1)


def data_term_and_grad(system: MriSystem, rho, y):
    """``sum_t ||A_t rho_t - y_t||^2`` and its gradient ``2 A^H (A rho - y)``.

    The gradient is w.r.t. (real part, imaginary part) packed as one complex field.
    """
    y = np.asarray(y.samples if isinstance(y, KSpaceData) else y)
    r = forward(system, rho) - y * system._rows
    value = float(np.vdot(r, r).real)
    return value, 2.0 * adjoint(system, r)


def round_half_up(x):
    return int(np.floor(x + 0.5))


def central_rows(nx_full, central_frac=0.15):
    """Central block of ``round(central_frac * Nx)`` rows around the DC row ``Nx // 2``.

    For an odd count the extra row goes below (toward lower indices).
    """
    n_c = round_half_up(central_frac * nx_full)
    start = nx_full // 2 - (n_c + 1) // 2
    return np.arange(start, start + n_c)


def make_mask(nt, nx_full, accel="four_x", central_frac=0.15, rng_seed=0, max_attempts=10_000):
    """Row sampling pattern for cine acquisitions.

    ``four_x`` keeps ``round(0.25 Nx)`` rows per frame: a fixed central block plus
    random outer rows drawn on both sides, with the outer sets of consecutive
    frames disjoint. If the outer count is odd, the extra outer row is placed on
    the side opposite the central block's extra row so the two halves of k-space
    carry the same number of rows.
    """
    if accel == "full":
        return SamplingMask.full(nt, nx_full)
    if accel != "four_x":
        raise ValueError(f"unknown acceleration {accel!r}")
    if nx_full < 8:
        raise MaskError(f"Nx_full must be ≥ 8 for four_x sampling, got {nx_full}")

    center = central_rows(nx_full, central_frac)
    n_total = round_half_up(0.25 * nx_full)
    n_outer = n_total - center.size
    if n_outer < 0:
        raise MaskError("central block larger than the per-frame row budget")
    lo, hi = (center[0], center[-1] + 1) if center.size else (nx_full // 2, nx_full // 2)
    below_pool = np.arange(0, lo)
    above_pool = np.arange(hi, nx_full)

    # central block carries its extra row below, so the outer extra row goes above
    n_below = n_outer // 2
    n_above = n_outer - n_below
    if center.size % 2 == 0 and n_outer % 2 == 1:
        n_below, n_above = n_above, n_below
    if below_pool.size < 2 * n_below or above_pool.size < 2 * n_above:
        raise MaskError("disjointness infeasible")

    rng = np.random.default_rng(rng_seed)
    rows = []
    prev = set()
    for _ in range(nt):
        for _attempt in range(max_attempts):
            outer = np.concatenate([
                rng.choice(below_pool, n_below, replace=False),
                rng.choice(above_pool, n_above, replace=False),
            ])
            if prev.isdisjoint(outer.tolist()):
                break
        else:
            raise MaskError("disjointness infeasible")
        prev = set(outer.tolist())
        rows.append(tuple(sorted(center.tolist() + outer.tolist())))
    return SamplingMask(tuple(rows), nx_full)


def outer_rows(mask: SamplingMask, central_frac=0.15):
    """Per-frame (below, above) outer rows of a ``four_x`` mask."""
    center = central_rows(mask.nx_full, central_frac)
    lo, hi = (center[0], center[-1] + 1) if center.size else (mask.nx_full // 2, mask.nx_full // 2)
    out = []
    for r in mask.rows:
        r = np.asarray(r)
        out.append((r[r < lo], r[r >= hi]))
    return out
