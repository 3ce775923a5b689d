"""Masked PSNR / SSIM on magnitude images, per frame, plus aggregation.

``data_range`` is ``max|gt| - min|gt|`` over the whole ground-truth sequence.
SSIM uses a 7x7 uniform window, K1 = 0.01, K2 = 0.03 and sample covariances,
and is averaged over mask pixels at least 3 px away from the border.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

WIN = 7
K1, K2 = 0.01, 0.03


class EmptyMaskError(ValueError):
    pass


def _prep(gt, rec, mask):
    gt = np.abs(np.asarray(gt))
    rec = np.abs(np.asarray(rec))
    if gt.ndim == 2:
        gt, rec = gt[None], rec[None]
    if gt.shape != rec.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {rec.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} does not match frame shape {gt.shape[1:]}")
    if not mask.any():
        raise EmptyMaskError("mask is empty")
    return gt, rec, mask


def data_range(gt):
    m = np.abs(np.asarray(gt))
    return float(m.max() - m.min())


def psnr_masked(gt, rec, mask):
    """Per-frame PSNR in dB over the masked pixels; ``inf`` for a perfect frame."""
    gt, rec, mask = _prep(gt, rec, mask)
    dr = data_range(gt)
    out = []
    for g, r in zip(gt, rec):
        mse = float(np.mean((g[mask] - r[mask]) ** 2))
        out.append(math.inf if mse == 0 else 10.0 * math.log10(dr * dr / mse))
    return out


def ssim_map(g, r, dr):
    """Full SSIM map of two 2-D magnitude images (valid where ``>= 3`` px from border)."""
    g = g.astype(np.float64)
    r = r.astype(np.float64)
    npix = WIN * WIN
    cov_norm = npix / (npix - 1.0)
    filt = lambda a: ndimage.uniform_filter(a, size=WIN, mode="reflect")  # noqa: E731
    ux, uy = filt(g), filt(r)
    uxx, uyy, uxy = filt(g * g), filt(r * r), filt(g * r)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (K1 * dr) ** 2
    c2 = (K2 * dr) ** 2
    num = (2 * ux * uy + c1) * (2 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return num / den


def valid_region(shape):
    pad = (WIN - 1) // 2
    v = np.zeros(shape, dtype=bool)
    v[pad:shape[0] - pad, pad:shape[1] - pad] = True
    return v


def ssim_masked(gt, rec, mask):
    """Per-frame mean SSIM over mask pixels inside the window-valid region."""
    gt, rec, mask = _prep(gt, rec, mask)
    sel = mask & valid_region(mask.shape)
    if not sel.any():
        raise EmptyMaskError("mask does not intersect the SSIM valid region")
    dr = data_range(gt)
    return [float(np.mean(ssim_map(g, r, dr)[sel])) for g, r in zip(gt, rec)]


@dataclass(frozen=True)
class MetricReport:
    per_frame: tuple  # ((psnr_db, ssim), ...)
    mean_psnr: float
    std_psnr: float
    mean_ssim: float
    std_ssim: float
    n_inf: int = 0

    def write_csv(self, path):
        """Write CSV to a path or an open text stream."""
        if hasattr(path, "write"):
            self._write(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["frame", "psnr_db", "ssim"])
        for i, (p, s) in enumerate(self.per_frame):
            w.writerow([i, _fmt(p), _fmt(s)])
        w.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim)])
        w.writerow(["std", _fmt(self.std_psnr), _fmt(self.std_ssim)])


def _fmt(x):
    return "inf" if math.isinf(x) else repr(float(x))


def aggregate(psnr, ssim):
    """Means and population standard deviations over frames.

    Frames with infinite PSNR are left out of the PSNR statistics; if every
    frame is perfect the PSNR mean is ``inf`` and its std 0.
    """
    psnr = list(psnr)
    ssim = list(ssim)
    if not psnr or len(psnr) != len(ssim):
        raise ValueError("need matching, nonempty per-frame lists")
    finite = np.array([p for p in psnr if not math.isinf(p)])
    n_inf = len(psnr) - finite.size
    if finite.size:
        mean_p, std_p = float(finite.mean()), float(finite.std())
    else:
        mean_p, std_p = math.inf, 0.0
    s = np.asarray(ssim, dtype=np.float64)
    return MetricReport(tuple(zip(psnr, ssim)), mean_p, std_p, float(s.mean()), float(s.std()), n_inf)


def evaluate(gt, rec, mask):
    return aggregate(psnr_masked(gt, rec, mask), ssim_masked(gt, rec, mask))
