"""Array containers for image sequences, velocities and k-space, with file I/O.

The numerical core works on plain numpy arrays:

* image sequence: complex128, shape ``(Nt, Nx, Ny)``
* velocity field: complex128, shape ``(2, Nt, Nx, Ny)`` holding ``(vx, vy)``
* k-space samples: complex128, shape ``(Nt, Nc, Nx, Ny)``, zero-filled

The dataclasses below wrap those arrays with invariant checks and are what
gets written to and read from disk.

File formats
------------
CXSEQ   ``"CXSEQ1 <Nt> <Nx> <Ny>\\n"`` + interleaved little-endian f64 (re, im)
CXMASK  ``"CXMASK1 <Nt> <Nx_full>\\n"`` + Nt lines of space-separated rows
CXKSP   ``"CXKSP1 <Nt> <Nc> <Nx> <Ny>\\n"`` + payload + embedded CXMASK block

Velocity fields are two CXSEQ blocks back to back (vx then vy).
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_LE_C128 = np.dtype("<c16")


class GridError(ValueError):
    """Base class for invalid containers or malformed files."""


class HeaderError(GridError):
    pass


class PayloadLengthError(GridError):
    pass


class NonFiniteError(GridError):
    pass


class InvariantError(GridError):
    pass


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what}: non-finite entries (NaN/Inf) in payload")


def _check_dims(nt, nx, ny):
    if nt < 1:
        raise InvariantError("invariant violation: Nt ≥ 1")
    if nx < 2:
        raise InvariantError("invariant violation: Nx ≥ 2")
    if ny < 2:
        raise InvariantError("invariant violation: Ny ≥ 2")


@dataclass(frozen=True)
class ImageSequence:
    """Complex image stack of shape ``(Nt, Nx, Ny)``."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.complex128)
        if a.ndim != 3:
            raise InvariantError(f"image sequence must be 3-D, got shape {a.shape}")
        _check_dims(*a.shape)
        _check_finite(a, "image sequence")
        object.__setattr__(self, "data", a)

    @property
    def shape(self):
        return self.data.shape

    @property
    def real(self):
        return self.data.real

    @property
    def imag(self):
        return self.data.imag


@dataclass(frozen=True)
class VelocityField:
    """Complex 2-vector field ``(vx, vy)``, each of shape ``(Nt, Nx, Ny)``."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        vx = np.asarray(self.vx, dtype=np.complex128)
        vy = np.asarray(self.vy, dtype=np.complex128)
        if vx.shape != vy.shape or vx.ndim != 3:
            raise InvariantError(f"velocity components differ in shape: {vx.shape} vs {vy.shape}")
        _check_dims(*vx.shape)
        _check_finite(vx, "velocity vx")
        _check_finite(vy, "velocity vy")
        object.__setattr__(self, "vx", vx)
        object.__setattr__(self, "vy", vy)

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v)
        if v.ndim != 4 or v.shape[0] != 2:
            raise InvariantError(f"velocity array must have shape (2, Nt, Nx, Ny), got {v.shape}")
        return cls(v[0], v[1])

    @property
    def data(self):
        return np.stack([self.vx, self.vy])

    @property
    def shape(self):
        return self.vx.shape


@dataclass(frozen=True)
class SamplingMask:
    """Per-frame sampled phase-encoding rows."""

    rows: tuple
    nx_full: int

    def __post_init__(self):
        if self.nx_full < 2:
            raise InvariantError("invariant violation: Nx_full ≥ 2")
        frames = []
        for t, r in enumerate(self.rows):
            r = np.asarray(r, dtype=np.int64).ravel()
            if len(np.unique(r)) != len(r):
                raise InvariantError(f"frame {t}: duplicate row indices")
            if r.size and (r.min() < 0 or r.max() >= self.nx_full):
                raise InvariantError(f"frame {t}: row index outside [0, {self.nx_full})")
            frames.append(tuple(int(i) for i in np.sort(r)))
        if not frames:
            raise InvariantError("invariant violation: Nt ≥ 1")
        object.__setattr__(self, "rows", tuple(frames))

    @classmethod
    def full(cls, nt, nx_full):
        return cls(tuple(tuple(range(nx_full)) for _ in range(nt)), nx_full)

    @property
    def nt(self):
        return len(self.rows)

    def as_array(self):
        """Boolean array of shape ``(Nt, Nx_full)``."""
        m = np.zeros((self.nt, self.nx_full), dtype=bool)
        for t, r in enumerate(self.rows):
            m[t, list(r)] = True
        return m

    @property
    def is_full(self):
        return all(len(r) == self.nx_full for r in self.rows)


@dataclass(frozen=True)
class CoilMaps:
    """Static coil sensitivities of shape ``(Nc, Nx, Ny)``."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.complex128)
        if m.ndim != 3 or m.shape[0] < 1:
            raise InvariantError(f"coil maps must have shape (Nc, Nx, Ny), got {m.shape}")
        _check_finite(m, "coil maps")
        object.__setattr__(self, "maps", m)

    @property
    def nc(self):
        return self.maps.shape[0]

    def rss(self):
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))


@dataclass(frozen=True)
class KSpaceData:
    """Zero-filled multi-coil samples of shape ``(Nt, Nc, Nx, Ny)``."""

    samples: np.ndarray
    mask: SamplingMask = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 4:
            raise InvariantError(f"k-space must have shape (Nt, Nc, Nx, Ny), got {s.shape}")
        nt, nc, nx, _ = s.shape
        if nc < 1:
            raise InvariantError("invariant violation: Nc ≥ 1")
        if self.mask.nt != nt or self.mask.nx_full != nx:
            raise InvariantError(
                f"mask ({self.mask.nt} frames, {self.mask.nx_full} rows) "
                f"does not match k-space shape {s.shape}"
            )
        _check_finite(s, "k-space")
        unsampled = ~self.mask.as_array()
        if np.any(s[np.broadcast_to(unsampled[:, None, :, None], s.shape)] != 0):
            raise InvariantError("k-space has nonzero samples on unsampled rows")
        object.__setattr__(self, "samples", s)

    @property
    def nc(self):
        return self.samples.shape[1]

    @property
    def shape(self):
        return self.samples.shape


# ---------------------------------------------------------------------------
# serialization


def _atomic_write(path, payload: bytes):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read {path}: {exc}") from exc


def _read_line(buf: bytes, pos: int, path):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise HeaderError(f"{path}: malformed header (no newline)")
    return buf[pos:end].decode("ascii", errors="replace"), end + 1


def _parse_header(line, magic, nfields, path):
    parts = line.split()
    if not parts or parts[0] != magic or len(parts) != nfields + 1:
        raise HeaderError(f"{path}: malformed header {line!r}, expected {magic} with {nfields} dims")
    try:
        return [int(p) for p in parts[1:]]
    except ValueError:
        raise HeaderError(f"{path}: malformed header {line!r}") from None


def _complex_payload(buf, pos, count, path):
    nbytes = 16 * count
    if len(buf) - pos < nbytes:
        raise PayloadLengthError(f"{path}: payload length mismatch")
    arr = np.frombuffer(buf, dtype=_LE_C128, count=count, offset=pos).astype(np.complex128)
    _check_finite(arr, str(path))
    return arr, pos + nbytes


def _seq_block(a) -> bytes:
    nt, nx, ny = a.shape
    head = f"CXSEQ1 {nt} {nx} {ny}\n".encode("ascii")
    return head + np.ascontiguousarray(a, dtype=_LE_C128).tobytes()


def _decode_seq(buf, pos, path):
    line, pos = _read_line(buf, pos, path)
    nt, nx, ny = _parse_header(line, "CXSEQ1", 3, path)
    _check_dims(nt, nx, ny)
    arr, pos = _complex_payload(buf, pos, nt * nx * ny, path)
    return arr.reshape(nt, nx, ny), pos


def _mask_block(mask: SamplingMask) -> bytes:
    lines = [f"CXMASK1 {mask.nt} {mask.nx_full}"]
    lines += [" ".join(str(r) for r in rows) for rows in mask.rows]
    return ("\n".join(lines) + "\n").encode("ascii")


def _decode_mask(buf, pos, path):
    line, pos = _read_line(buf, pos, path)
    nt, nx_full = _parse_header(line, "CXMASK1", 2, path)
    rows = []
    for _ in range(nt):
        line, pos = _read_line(buf, pos, path)
        try:
            rows.append(tuple(int(r) for r in line.split()))
        except ValueError:
            raise HeaderError(f"{path}: malformed mask row {line!r}") from None
    return SamplingMask(tuple(rows), nx_full), pos


def _expect_end(buf, pos, path):
    if pos != len(buf):
        raise PayloadLengthError(f"{path}: payload length mismatch ({len(buf) - pos} trailing bytes)")


def save_sequence(seq, path):
    a = seq.data if isinstance(seq, ImageSequence) else ImageSequence(seq).data
    _atomic_write(path, _seq_block(a))


def load_sequence(path) -> ImageSequence:
    buf = _read(path)
    a, pos = _decode_seq(buf, 0, path)
    _expect_end(buf, pos, path)
    return ImageSequence(a)


def save_velocity(v, path):
    if not isinstance(v, VelocityField):
        v = VelocityField.from_array(v)
    _atomic_write(path, _seq_block(v.vx) + _seq_block(v.vy))


def load_velocity(path) -> VelocityField:
    buf = _read(path)
    vx, pos = _decode_seq(buf, 0, path)
    vy, pos = _decode_seq(buf, pos, path)
    _expect_end(buf, pos, path)
    return VelocityField(vx, vy)


def save_mask(mask: SamplingMask, path):
    _atomic_write(path, _mask_block(mask))


def load_mask(path) -> SamplingMask:
    buf = _read(path)
    mask, pos = _decode_mask(buf, 0, path)
    _expect_end(buf, pos, path)
    return mask


def save_kspace(y: KSpaceData, path):
    nt, nc, nx, ny = y.shape
    head = f"CXKSP1 {nt} {nc} {nx} {ny}\n".encode("ascii")
    payload = np.ascontiguousarray(y.samples, dtype=_LE_C128).tobytes()
    _atomic_write(path, head + payload + _mask_block(y.mask))


def load_kspace(path) -> KSpaceData:
    buf = _read(path)
    line, pos = _read_line(buf, 0, path)
    nt, nc, nx, ny = _parse_header(line, "CXKSP1", 4, path)
    if nt < 1 or nc < 1:
        raise InvariantError("invariant violation: Nt ≥ 1 and Nc ≥ 1")
    _check_dims(nt, nx, ny)
    arr, pos = _complex_payload(buf, pos, nt * nc * nx * ny, path)
    if not buf[pos:].startswith(b"CXMASK1"):
        raise PayloadLengthError(f"{path}: payload length mismatch (no trailing mask block)")
    mask, pos = _decode_mask(buf, pos, path)
    _expect_end(buf, pos, path)
    return KSpaceData(arr.reshape(nt, nc, nx, ny), mask)


def save_coils(coils: CoilMaps, path):
    """Coil maps are stored as a CXSEQ whose leading axis is the coil index."""
    _atomic_write(path, _seq_block(coils.maps))


def load_coils(path) -> CoilMaps:
    return CoilMaps(load_sequence(path).data)
