"""Exact cell integrals of singular convolution kernels.

Point-sampling 1/(z-xi) or 1/(z-xi)^2 on a lattice destroys the scaling
exponents the estimate verifiers measure, so every kernel here is the
exact integral of the continuum kernel over one rectangular cell,
evaluated through a 2-D antiderivative at the four cell corners:

    kernel        antiderivative P with  d^2 P / dx dy = k(w)
    1/w           -i * w * (log w - 1)
    1/w^2          i * log w
    log|w|         Im(w^2 * (2 log w - 3)) / 4

The corner formula needs the antiderivative smooth on the cell, so the
log branch cut is pointed away from each cell: cells left of the
singularity use arg in [0, 2pi), all others the principal branch.  The
self cell (singularity inside) integrates to zero for 1/w (odd kernel)
and for the 1/w^2 principal value (quarter-turn cancellation); for
log|w| it is assembled from the four quadrant sub-rectangles.

Convolutions run through FFTs with full zero padding, so there is no
wraparound.  `DBAR_THREADS` caps FFT workers (default 1 worker, which
keeps artifacts byte-identical by construction).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import fft as sfft

__all__ = [
    "cauchy_cell_kernel",
    "beurling_cell_kernel",
    "newton_cell_kernel",
    "lattice_kernel",
    "convolve_lattice",
]


def _fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("DBAR_THREADS", "1")))
    except ValueError:
        return 1


def _branched_log(w: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """log w with the cut along positive reals where `lower` is set."""
    out = np.log(w.astype(np.complex128))
    if np.any(lower):
        th = np.angle(w[lower]) % (2.0 * np.pi)
        out[lower] = np.log(np.abs(w[lower])) + 1j * th
    return out


def _corner_eval(P, u, hx, hy):
    """P(c1)-P(c2)-P(c3)+P(c4) over the cell corners around offsets u."""
    lower = u.real < -hx / 4  # cells strictly left of the singular column
    a = hx / 2 + 1j * hy / 2
    b = hx / 2 - 1j * hy / 2
    return (
        P(u + a, lower) - P(u - b, lower) - P(u + b, lower) + P(u - a, lower)
    )


def cauchy_cell_kernel(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Integral of 1/w over the hx-by-hy cell centered at each offset u."""

    def P(w, lower):
        return -1j * w * (_branched_log(w, lower) - 1.0)

    u = np.asarray(u, dtype=np.complex128)
    out = _corner_eval(P, u, hx, hy)
    self_cell = (np.abs(u.real) < hx / 4) & (np.abs(u.imag) < hy / 4)
    out[self_cell] = 0.0  # odd kernel on a symmetric cell
    return out


def beurling_cell_kernel(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Principal-value integral of 1/w^2 over the cell at each offset u."""

    def P(w, lower):
        return 1j * _branched_log(w, lower)

    u = np.asarray(u, dtype=np.complex128)
    out = _corner_eval(P, u, hx, hy)
    self_cell = (np.abs(u.real) < hx / 4) & (np.abs(u.imag) < hy / 4)
    out[self_cell] = 0.0  # quarter-turn symmetry cancels the p.v.
    return out


def _newton_P(w, lower):
    zero = w == 0
    wsafe = np.where(zero, 1.0, w)
    lg = _branched_log(wsafe, np.asarray(lower) & ~zero)
    out = (wsafe * wsafe * (2.0 * lg - 3.0)).imag / 4.0
    return np.where(zero, 0.0, out)  # w^2 log w -> 0 at the corner


def newton_cell_kernel(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Integral of log|w| over the cell at each offset u (finite at u=0)."""
    u = np.asarray(u, dtype=np.complex128)
    out = _corner_eval(_newton_P, u, hx, hy).real
    self_cell = (np.abs(u.real) < hx / 4) & (np.abs(u.imag) < hy / 4)
    if np.any(self_cell):
        # quadrant assembly: log|w| is even in x and y separately
        a, b = hx / 2, hy / 2
        no = np.zeros(1, dtype=bool)
        quad = (
            _newton_P(np.array([a + 1j * b]), no)
            - _newton_P(np.array([1j * b]), no)
            - _newton_P(np.array([a + 0j]), no)
            + _newton_P(np.array([0j]), no)
        ).real[0]
        out[self_cell] = 4.0 * quad
    return out


def lattice_kernel(builder, src_shape, dst_shape, offsets, hx, hy) -> np.ndarray:
    """Kernel table K[i - j + shift] for source cells j and target cells i.

    offsets = (ox, oy) is the index of the target origin relative to the
    source origin; the table covers every needed difference.
    """
    nsx, nsy = src_shape
    ndx, ndy = dst_shape
    ox, oy = offsets
    ix = np.arange(ox - (nsx - 1), ox + ndx)
    iy = np.arange(oy - (nsy - 1), oy + ndy)
    U = (ix[:, None] * hx) + 1j * (iy[None, :] * hy)
    return builder(U, hx, hy)


def convolve_lattice(values: np.ndarray, kernel: np.ndarray, dst_shape) -> np.ndarray:
    """Full linear convolution of `values` with the offset `kernel` table.

    kernel[k, l] multiplies source cell j for target i with
    i - j = (k - (nsx - 1) + ox, ...); the result is cropped to dst_shape.
    """
    nsx, nsy = values.shape
    kx, ky = kernel.shape
    fx = sfft.next_fast_len(nsx + kx - 1)
    fy = sfft.next_fast_len(nsy + ky - 1)
    workers = _fft_workers()
    fv = sfft.fft2(values, s=(fx, fy), workers=workers)
    fk = sfft.fft2(kernel, s=(fx, fy), workers=workers)
    conv = sfft.ifft2(fv * fk, workers=workers)
    ndx, ndy = dst_shape
    return np.ascontiguousarray(conv[nsx - 1 : nsx - 1 + ndx, nsy - 1 : nsy - 1 + ndy])
