"""Periodic 2-D grid arithmetic: transforms, resampling, shifts, norms.

Conventions fixed here and relied on by every other module:

* A real grid is a 2-D float64 array with periodic boundary semantics.
  Its transform is the unnormalised DFT (``numpy.fft.fft2``); the inverse
  carries the 1/(H*W) factor.  Parseval therefore reads
  ``sum(g**2) == sum(abs(dft(g))**2) / (H*W)``.
* Circular convolution:  ``convolve(a, b) == idft(dft(a) * dft(b))``.
* Circular correlation:  ``correlate(a, b)[t] == sum_u a[u] * b[u + t]``,
  equal to ``idft(conj(dft(a)) * dft(b))`` for real inputs.
* ``cyclic_shift(g, di, dj)`` moves content down/right: the output at
  (i, j) is the input at (i - di, j - dj), wrapped.  Fractional shifts are
  phase shifts; on even-sized axes the Nyquist bin is weighted by
  cos(pi * shift) so the output stays real.  Fractional shifts are exact
  on signals with no Nyquist-frequency energy.
* Resampling zero-pads or truncates centred Fourier coefficients, with
  Nyquist bins split (upsampling) or folded (downsampling) so band-limited
  signals round-trip exactly and the mean-square content of retained
  frequencies is preserved.
"""

from __future__ import annotations

import numpy as np

# Type aliases for readability; grids are plain numpy arrays.
RealGrid = np.ndarray
ComplexGrid = np.ndarray


def dft(g: RealGrid) -> ComplexGrid:
    return np.fft.fft2(np.asarray(g, dtype=np.float64))


def idft(G: ComplexGrid) -> RealGrid:
    return np.fft.ifft2(G).real


def idft_complex(G: ComplexGrid) -> ComplexGrid:
    return np.fft.ifft2(G)


def parseval_factor(shape) -> float:
    "Constant c with ||g||^2 == c * ||dft(g)||^2."
    h, w = shape[-2], shape[-1]
    return 1.0 / (h * w)


def norm2(g) -> float:
    "Squared l2 norm in the spatial domain."
    g = np.asarray(g)
    return float(np.sum(np.abs(g) ** 2))


def fourier_norm2(G) -> float:
    "Squared spatial l2 norm computed from Fourier coefficients."
    G = np.asarray(G)
    return norm2(G) * parseval_factor(G.shape)


def inner(a, b) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)))


def fourier_inner(A, B) -> complex:
    "Spatial inner product <a, b> computed from Fourier coefficients."
    A = np.asarray(A)
    return complex(np.sum(np.conj(A) * B) * parseval_factor(A.shape))


def convolve(a: RealGrid, b: RealGrid) -> RealGrid:
    "Circular 2-D convolution."
    return idft(dft(a) * dft(b))


def correlate(a: RealGrid, b: RealGrid) -> RealGrid:
    "Circular cross-correlation: out[t] = sum_u a[u] * b[u + t]."
    return idft(np.conj(dft(a)) * dft(b))


def is_hermitian(G: ComplexGrid, rtol: float = 1e-10) -> bool:
    "True when G has the conjugate symmetry of a real signal's transform."
    G = np.asarray(G)
    flipped = np.conj(G[np.ix_(-np.arange(G.shape[0]) % G.shape[0],
                               -np.arange(G.shape[1]) % G.shape[1])])
    scale = np.max(np.abs(G)) or 1.0
    return bool(np.max(np.abs(G - flipped)) <= rtol * scale)


def _resample_axis(G: np.ndarray, new_n: int, axis: int) -> np.ndarray:
    """Zero-pad / truncate centred Fourier coefficients along one axis.

    Operates on the unshifted spectrum; handles the Nyquist bin of
    even-length axes by splitting (when growing) or folding (when
    shrinking) so that Hermitian symmetry survives.
    """
    n = G.shape[axis]
    if new_n == n:
        return G
    G = np.moveaxis(G, axis, 0)
    out_shape = (new_n,) + G.shape[1:]
    out = np.zeros(out_shape, dtype=G.dtype)
    if new_n > n:
        half = n // 2
        if n % 2 == 0:
            # positive freqs 0..half-1, then split the Nyquist bin at `half`
            out[:half] = G[:half]
            out[half] = 0.5 * G[half]
            out[new_n - half] = 0.5 * G[half]
            if half > 1:
                out[new_n - half + 1:] = G[half + 1:]
        else:
            out[:half + 1] = G[:half + 1]
            out[new_n - half:] = G[half + 1:]
    else:
        half = new_n // 2
        if new_n % 2 == 0:
            out[:half] = G[:half]
            # new Nyquist bin collects the +/- new_n/2 source bins
            out[half] = G[half] + G[n - half]
            if half > 1:
                out[half + 1:] = G[n - half + 1:]
        else:
            out[:half + 1] = G[:half + 1]
            out[half + 1:] = G[n - half:]
    return np.moveaxis(out, 0, axis)


def resample(g: RealGrid, new_h: int, new_w: int) -> RealGrid:
    "Band-limited resampling by padding/truncating Fourier coefficients."
    g = np.asarray(g, dtype=np.float64)
    if new_h < 2 or new_w < 2:
        raise ValueError("resample target must be at least 2x2")
    h, w = g.shape
    G = np.fft.fft2(g)
    G = _resample_axis(G, new_h, axis=0)
    G = _resample_axis(G, new_w, axis=1)
    G *= (new_h * new_w) / (h * w)
    return np.fft.ifft2(G).real


def resample_fourier(G: ComplexGrid, new_h: int, new_w: int) -> ComplexGrid:
    "resample() acting directly on an unnormalised spectrum."
    h, w = G.shape
    out = _resample_axis(np.asarray(G), new_h, axis=0)
    out = _resample_axis(out, new_w, axis=1)
    return out * ((new_h * new_w) / (h * w))


def _shift_phase(n: int, d: float) -> np.ndarray:
    "Per-frequency factors realizing a cyclic shift by d samples."
    freqs = np.fft.fftfreq(n)
    phase = np.exp(-2j * np.pi * freqs * d)
    if n % 2 == 0:
        # keep the operator real-to-real: damp the Nyquist bin
        phase[n // 2] = np.cos(np.pi * d)
    return phase


def cyclic_shift(g: RealGrid, di: float, dj: float) -> RealGrid:
    """Cyclically shift g by (di, dj) samples; fractional shifts allowed."""
    g = np.asarray(g, dtype=np.float64)
    if di == int(di) and dj == int(dj):
        return np.roll(g, (int(di), int(dj)), axis=(0, 1))
    h, w = g.shape
    phase = np.outer(_shift_phase(h, di), _shift_phase(w, dj))
    return np.fft.ifft2(np.fft.fft2(g) * phase).real


def signed_index(i, n: int):
    "Map grid index i to the signed displacement in [-n/2, n/2)."
    return (np.asarray(i) + n // 2) % n - n // 2


def random_bandlimited(shape, rng, keep: int = 3) -> RealGrid:
    """Random real grid with energy only in frequencies |k| <= keep.

    Exactly representable at any resolution >= 2*keep+2, so useful as a
    test signal for resampling and fractional-shift identities.
    """
    h, w = shape
    G = np.zeros((h, w), dtype=np.complex128)
    for ki in range(-keep, keep + 1):
        for kj in range(-keep, keep + 1):
            if (ki, kj) == (0, 0):
                G[0, 0] = rng.normal() * h * w
                continue
            c = rng.normal() + 1j * rng.normal()
            G[ki % h, kj % w] += c
            G[-ki % h, -kj % w] += np.conj(c)
    return np.fft.ifft2(G).real
