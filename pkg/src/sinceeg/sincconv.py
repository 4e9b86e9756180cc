"""Learnable windowed-sinc band-pass filterbank layer.

Every filter in the bank is a rectangular band-pass FIR kernel synthesized
from just two learnable numbers, its cut-off frequency pair, instead of a
free tap vector.  This module provides kernel synthesis, the 1-D forward
convolution, analytic gradients with respect to the cut-offs, and the
frequency-response readout used for interpretability analysis.

Frequencies are normalized (Hz / sample_rate) internally.  The raw
parameters are unconstrained reals mapped through

    f1 = |f_low_raw|                  (clamped below Nyquist - min_band)
    f2 = f1 + |band_raw| + min_band   (clamped at Nyquist = 0.5)

so 0 <= f1 < f2 <= 0.5 holds by construction, no matter what the optimizer
does to the raw values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_MIN_BAND_HZ = 1.0


def hamming_window(length: int) -> np.ndarray:
    """Hamming taps w[k] = 0.54 - 0.46*cos(2*pi*k/(length-1)), k = 0..length-1."""
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    k = np.arange(length, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (length - 1))


def _sinc(x):
    # sin(x)/x with the removable singularity filled: sinc(0) = 1
    return np.sinc(x / np.pi)


def time_axis(kernel_len: int) -> np.ndarray:
    """Symmetric tap index n = k - (kernel_len-1)/2 (fractional for even lengths)."""
    return np.arange(kernel_len, dtype=np.float64) - (kernel_len - 1) / 2.0


def windowed_sinc_bandpass(f1: float, f2: float, kernel_len: int,
                           window: np.ndarray | None = None) -> np.ndarray:
    """Band-pass taps 2*f2*sinc(2*pi*f2*n) - 2*f1*sinc(2*pi*f1*n), windowed.

    ``f1`` and ``f2`` are normalized cut-offs taken as-is (no reparametrization);
    this is the shared synthesis routine behind both the learnable bank and the
    fixed preprocessing band-pass.
    """
    if window is None:
        window = hamming_window(kernel_len)
    n = time_axis(kernel_len)
    g = 2.0 * f2 * _sinc(2.0 * np.pi * f2 * n) - 2.0 * f1 * _sinc(2.0 * np.pi * f1 * n)
    return g * window


@dataclass
class FilterParams:
    """Raw (unconstrained) parameter pair of one band-pass filter.

    Units are normalized frequency, i.e. Hz / sample_rate.
    """

    f_low_raw: float
    band_raw: float


def effective_cutoffs(f_low_raw, band_raw, min_band):
    """Map raw parameters to the constrained cut-off pair (f1, f2).

    Works elementwise on scalars or arrays.  Guarantees
    ``0 <= f1 < f2 <= 0.5`` for any raw values and ``min_band > 0``.
    """
    f1 = np.minimum(np.abs(f_low_raw), 0.5 - min_band)
    f2 = np.minimum(f1 + np.abs(band_raw) + min_band, 0.5)
    return f1, f2


def _cutoff_chain_masks(f_low_raw, band_raw, min_band):
    # Derivative factors of the raw -> (f1, f2) map.  Clamped branches have
    # zero derivative; |.| contributes its sign (subgradient 0 at exactly 0).
    s_low = np.sign(f_low_raw)
    s_band = np.sign(band_raw)
    f1_unclamped = np.abs(f_low_raw) < 0.5 - min_band
    f2_unclamped = (np.minimum(np.abs(f_low_raw), 0.5 - min_band)
                    + np.abs(band_raw) + min_band) < 0.5
    d_f1_d_low = s_low * f1_unclamped
    d_f2_d_low = d_f1_d_low * f2_unclamped
    d_f2_d_band = s_band * f2_unclamped
    return d_f1_d_low, d_f2_d_low, d_f2_d_band


def make_kernel(params: FilterParams, kernel_len: int, window: np.ndarray,
                min_band: float = 0.002) -> np.ndarray:
    """Synthesize one filter's taps from its raw parameter pair."""
    f1, f2 = effective_cutoffs(params.f_low_raw, params.band_raw, min_band)
    return windowed_sinc_bandpass(float(f1), float(f2), kernel_len, window)


def kernel_grads(params: FilterParams, kernel_len: int, window: np.ndarray,
                 min_band: float = 0.002) -> tuple[np.ndarray, np.ndarray]:
    """Analytic tap gradients (dG/df1, dG/df2) at the effective cut-offs.

    Using g[n] = (sin(2*pi*f2*n) - sin(2*pi*f1*n)) / (pi*n) * w, the
    derivatives are +-2*cos(2*pi*f*n)*w with limits +-2*w at n = 0.
    """
    f1, f2 = effective_cutoffs(params.f_low_raw, params.band_raw, min_band)
    n = time_axis(kernel_len)
    dg_df1 = -2.0 * np.cos(2.0 * np.pi * float(f1) * n) * window
    dg_df2 = 2.0 * np.cos(2.0 * np.pi * float(f2) * n) * window
    return dg_df1, dg_df2


def frequency_response(kernel: np.ndarray, n_fft: int,
                       sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude of the zero-padded DFT on the physical grid [0, sample_rate/2].

    Returns (freqs_hz, magnitude) with n_fft//2 + 1 bins.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if n_fft < kernel.shape[-1]:
        raise ValueError(f"n_fft={n_fft} smaller than kernel length {kernel.shape[-1]}")
    mag = np.abs(np.fft.rfft(kernel, n=n_fft))
    freqs = np.arange(n_fft // 2 + 1, dtype=np.float64) * sample_rate / n_fft
    return freqs, mag


@dataclass
class Filterbank:
    """A bank of learnable band-pass filters sharing length and window.

    ``f_low_raw`` and ``band_raw`` hold the raw parameters of all filters in
    normalized units; the Hamming window is precomputed once.  The bank is
    immutable during a forward/backward pair; only the optimizer mutates the
    raw arrays.
    """

    f_low_raw: np.ndarray
    band_raw: np.ndarray
    kernel_len: int
    sample_rate: float
    min_band_hz: float = DEFAULT_MIN_BAND_HZ
    window: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.f_low_raw = np.asarray(self.f_low_raw, dtype=np.float64)
        self.band_raw = np.asarray(self.band_raw, dtype=np.float64)
        if self.f_low_raw.ndim != 1 or self.f_low_raw.shape != self.band_raw.shape:
            raise ValueError("f_low_raw and band_raw must be 1-D arrays of equal length")
        if self.n_filters < 1:
            raise ValueError("a filterbank needs at least one filter")
        if self.kernel_len < 3:
            raise ValueError(f"kernel_len must be >= 3, got {self.kernel_len}")
        self.window = hamming_window(self.kernel_len)

    @property
    def n_filters(self) -> int:
        return self.f_low_raw.shape[0]

    @property
    def min_band(self) -> float:
        """Minimum bandwidth in normalized units."""
        return self.min_band_hz / self.sample_rate

    def cutoffs(self) -> tuple[np.ndarray, np.ndarray]:
        """Effective (f1, f2) arrays in normalized units."""
        return effective_cutoffs(self.f_low_raw, self.band_raw, self.min_band)

    def cutoffs_hz(self) -> tuple[np.ndarray, np.ndarray]:
        f1, f2 = self.cutoffs()
        return f1 * self.sample_rate, f2 * self.sample_rate

    def kernels(self) -> np.ndarray:
        """Synthesize all kernels, shape [n_filters, kernel_len]."""
        f1, f2 = self.cutoffs()
        n = time_axis(self.kernel_len)
        a1 = 2.0 * np.pi * f1[:, None] * n[None, :]
        a2 = 2.0 * np.pi * f2[:, None] * n[None, :]
        g = 2.0 * f2[:, None] * _sinc(a2) - 2.0 * f1[:, None] * _sinc(a1)
        return g * self.window[None, :]

    def kernel_grad_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(dG/df1, dG/df2) for every filter, each [n_filters, kernel_len]."""
        f1, f2 = self.cutoffs()
        n = time_axis(self.kernel_len)
        dg1 = -2.0 * np.cos(2.0 * np.pi * f1[:, None] * n[None, :]) * self.window[None, :]
        dg2 = 2.0 * np.cos(2.0 * np.pi * f2[:, None] * n[None, :]) * self.window[None, :]
        return dg1, dg2

    def check_ordering(self):
        """Raise if the structural cut-off invariant is ever violated (e.g. NaNs)."""
        f1, f2 = self.cutoffs()
        if not (np.all(f2 > f1) and np.all(f2 <= 0.5) and np.all(f1 >= 0.0)):
            raise RuntimeError("filterbank cut-off invariant violated "
                               f"(f1={f1}, f2={f2})")

    @classmethod
    def spread_init(cls, n_filters: int, kernel_len: int, sample_rate: float,
                    init_bandwidth_hz: float = 4.0,
                    min_band_hz: float = DEFAULT_MIN_BAND_HZ) -> "Filterbank":
        """Bank with low cut-offs log-spaced over [1 Hz, Nyquist - 2 Hz].

        The spread covers the whole spectrum so post-training analyses are not
        biased toward any band by the starting point.
        """
        nyq = sample_rate / 2.0
        f_low_hz = np.geomspace(1.0, nyq - 2.0, n_filters)
        band_hz = np.full(n_filters, max(init_bandwidth_hz - min_band_hz, 0.0))
        return cls(f_low_hz / sample_rate, band_hz / sample_rate,
                   kernel_len=kernel_len, sample_rate=sample_rate,
                   min_band_hz=min_band_hz)


def _corr1d_same(x: np.ndarray, kernels: np.ndarray,
                 pad_left: int, pad_right: int) -> np.ndarray:
    # cross-correlation with zero padding; x [B, T], kernels [F, L] -> [B, F, T]
    xp = np.pad(x, ((0, 0), (pad_left, pad_right)))
    win = sliding_window_view(xp, kernels.shape[1], axis=1)  # [B, T, L] view
    return np.einsum("btl,fl->bft", win, kernels, optimize=True)


def sincconv_forward(signal: np.ndarray, bank: Filterbank,
                     padding_mode: str = "same") -> np.ndarray:
    """Filter a batch of sequences with every kernel in the bank.

    signal [batch, time] -> output [batch, n_filters, time]; "same" zero
    padding keeps the time length, stride is 1.
    """
    if padding_mode != "same":
        raise ValueError(f"unsupported padding_mode {padding_mode!r}")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 2:
        raise ValueError(f"signal must be [batch, time], got shape {signal.shape}")
    if signal.shape[1] < bank.kernel_len:
        raise ValueError(f"time length {signal.shape[1]} shorter than "
                         f"kernel_len {bank.kernel_len}")
    pl = (bank.kernel_len - 1) // 2
    pr = bank.kernel_len - 1 - pl
    return _corr1d_same(signal, bank.kernels(), pl, pr)


def sincconv_backward(upstream: np.ndarray, signal: np.ndarray,
                      bank: Filterbank) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the sinc convolution.

    Returns ``(signal_grad, param_grads)`` where ``signal_grad`` matches the
    input shape and ``param_grads`` is [n_filters, 2] with columns
    (d/d f_low_raw, d/d band_raw), i.e. already chained through the raw
    parametrization.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    B, T = signal.shape
    L = bank.kernel_len
    F = bank.n_filters
    if upstream.shape != (B, F, T):
        raise ValueError(f"upstream shape {upstream.shape} does not match "
                         f"forward output {(B, F, T)}")
    pl = (L - 1) // 2
    pr = L - 1 - pl
    kernels = bank.kernels()

    # signal gradient: correlate upstream with the flipped kernels, padding
    # mirrored relative to the forward pass
    kflip = kernels[:, ::-1]
    up_pad = np.pad(upstream, ((0, 0), (0, 0), (pr, pl)))
    win_u = sliding_window_view(up_pad, L, axis=2)            # [B, F, T, L]
    signal_grad = np.einsum("bftl,fl->bt", win_u, kflip, optimize=True)

    # tap gradient dL/dk[f, j] = sum_{b,t} upstream[b,f,t] * xpad[b, t+j]
    xp = np.pad(signal, ((0, 0), (pl, pr)))
    win_x = sliding_window_view(xp, L, axis=1)                # [B, T, L]
    dk = np.einsum("bft,btl->fl", upstream, win_x, optimize=True)

    # chain through taps -> effective cut-offs -> raw parameters
    dg1, dg2 = bank.kernel_grad_arrays()
    g_f1 = np.sum(dk * dg1, axis=1)
    g_f2 = np.sum(dk * dg2, axis=1)
    d_f1_d_low, d_f2_d_low, d_f2_d_band = _cutoff_chain_masks(
        bank.f_low_raw, bank.band_raw, bank.min_band)
    g_low = g_f1 * d_f1_d_low + g_f2 * d_f2_d_low
    g_band = g_f2 * d_f2_d_band
    return signal_grad, np.stack([g_low, g_band], axis=1)
