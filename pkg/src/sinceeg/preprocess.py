"""Raw-trial preprocessing: channel averaging, band-pass, normalization, ZCA.

The fixed composition is

    channel_average -> bandpass_fir -> amplitude_normalize -> [zca_whiten]

where ZCA is optional and fit at corpus level (per training fold, never on
held-out trials).  A fingerprint of the configuration travels with every
trained model so checkpoints record how their inputs were produced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from .sincconv import hamming_window, windowed_sinc_bandpass


@dataclass(frozen=True)
class PreprocessConfig:
    band_lo_hz: float = 0.5
    band_hi_hz: float = 45.0
    bandpass_taps: int = 501
    use_zca: bool = False
    zca_eps: float = 1e-5

    def fingerprint(self) -> str:
        """Stable short hash of the configuration."""
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def channel_average(samples: np.ndarray) -> np.ndarray:
    """Mean across channels per time point; samples [channels, time] -> [time]."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"expected [channels, time] with >= 1 channel, got {samples.shape}")
    return samples.mean(axis=0)


def bandpass_kernel(sample_rate: float, low_hz: float, high_hz: float,
                    taps: int) -> np.ndarray:
    """Hamming-windowed sinc band-pass taps for the given physical corners."""
    if not (0.0 < low_hz < high_hz < sample_rate / 2.0):
        raise ValueError(f"invalid band {low_hz}-{high_hz} Hz at {sample_rate} Hz")
    if taps % 2 != 1:
        raise ValueError(f"taps must be odd, got {taps}")
    window = hamming_window(taps)
    return windowed_sinc_bandpass(low_hz / sample_rate, high_hz / sample_rate,
                                  taps, window)


def bandpass_fir(sequence: np.ndarray, sample_rate: float, low_hz: float,
                 high_hz: float, taps: int = 501) -> np.ndarray:
    """Zero-phase band-pass: filter forward, reverse, filter, reverse.

    Output length equals input length; the effective magnitude response is
    the square of the single-pass response.
    """
    kernel = bandpass_kernel(sample_rate, low_hz, high_hz, taps)
    x = np.asarray(sequence, dtype=np.float64)
    y = np.convolve(x, kernel, mode="same")
    y = np.convolve(y[::-1], kernel, mode="same")[::-1]
    return y


def amplitude_normalize(sequence: np.ndarray) -> np.ndarray:
    """Per-trial z-score with a 1e-12 std floor (constant input -> zeros)."""
    x = np.asarray(sequence, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 samples to normalize")
    std = x.std()
    return (x - x.mean()) / max(std, 1e-12)


def zca_whiten(data: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Whiten rows of data [n_trials, time]; returns (whitened, transform).

    transform = E diag(1/sqrt(lambda + eps)) E^T from the eigendecomposition
    of the feature covariance; it is symmetric and decorrelates the features
    while staying close to the original basis.
    """
    w = ZCAWhitener(eps).fit(data)
    return w.transform(data), w.transform_


class ZCAWhitener:
    """Fit-once/apply-many ZCA transform (fold-level usage)."""

    def __init__(self, eps: float = 1e-5):
        self.eps = eps
        self.mean_: np.ndarray | None = None
        self.transform_: np.ndarray | None = None

    def fit(self, data: np.ndarray) -> "ZCAWhitener":
        X = np.asarray(data, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError(f"need [n_trials >= 2, time], got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite values in whitening input")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = (Xc.T @ Xc) / (X.shape[0] - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        eigvals = np.maximum(eigvals, 0.0)  # clip tiny negative roundoff
        self.transform_ = (eigvecs * (1.0 / np.sqrt(eigvals + self.eps))) @ eigvecs.T
        return self

    def transform(self, data: np.ndarray) -> np.ndarray:
        if self.transform_ is None:
            raise RuntimeError("ZCAWhitener used before fit")
        X = np.asarray(data, dtype=np.float64)
        return (X - self.mean_) @ self.transform_


def preprocess_trial(samples: np.ndarray, sample_rate: float,
                     cfg: PreprocessConfig) -> np.ndarray:
    """Per-trial portion of the pipeline (everything except ZCA)."""
    seq = channel_average(samples)
    seq = bandpass_fir(seq, sample_rate, cfg.band_lo_hz, cfg.band_hi_hz,
                       cfg.bandpass_taps)
    return amplitude_normalize(seq)
