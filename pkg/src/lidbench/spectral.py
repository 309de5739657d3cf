"""STFT, mel filterbank, MFCC, long-term average spectrum and SNR estimation.

All frame geometry follows the 8 kHz front-end: 20 ms Hamming frames, 10 ms hop,
256-point FFT. Power spectra are one-sided with interior bins doubled, so that the
sum over bins equals the energy of the windowed frame.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dct, idct, rfft

from .audio_io import AudioBuffer, frame_signal, n_frames

LOG_FLOOR = 1e-12
PREEMPHASIS = 0.97
N_MELS = 30
N_MFCC = 20
FEATURE_KINDS = ("mfcc", "logmel", "mel", "pcen-mel")


@dataclass
class Spectrogram:
    values: np.ndarray  # (F, T) power
    freqs_hz: np.ndarray
    frame_len_samples: int
    hop_samples: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (D, T)
    kind: str = "mfcc"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or 0 in self.values.shape:
            raise ValueError(f"feature matrix must be 2-D and nonempty, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, kind=None) -> "FeatureMatrix":
        return FeatureMatrix(values, self.kind if kind is None else kind)


@dataclass
class LtasProfile:
    values: np.ndarray  # natural-log power per bin
    freqs_hz: np.ndarray
    n_frames_accumulated: int = 0


@dataclass
class SnrReport:
    snr_db: float
    signal_power_db: float
    noise_power_db: float
    n_frames: int


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def preemphasis(x: np.ndarray, coef: float = PREEMPHASIS) -> np.ndarray:
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - coef * x[:-1]
    return y


def stft(buf: AudioBuffer, frame_ms: float = 20, hop_ms: float = 10, fft_size: int = 256,
         mfcc: bool = False) -> Spectrogram:
    frame_len = int(round(frame_ms * buf.sample_rate_hz / 1000))
    hop = int(round(hop_ms * buf.sample_rate_hz / 1000))
    if frame_len > fft_size:
        raise ValueError("frame longer than FFT size")
    x = buf.samples
    if len(x) < frame_len:
        raise ValueError(f"buffer of {len(x)} samples is shorter than one frame ({frame_len})")
    if mfcc:
        x = preemphasis(x)
    frames = frame_signal(x, frame_len, hop) * np.hamming(frame_len)
    spec = rfft(frames, n=fft_size, axis=1, norm="ortho")
    power = spec.real ** 2 + spec.imag ** 2
    # zero-padded ortho FFT: |X|^2 summed over all N bins = frame energy
    power[:, 1:fft_size // 2] *= 2.0
    freqs = np.arange(fft_size // 2 + 1) * buf.sample_rate_hz / fft_size
    return Spectrogram(power.T.copy(), freqs, frame_len, hop)


def ltas_segment(spec: Spectrogram) -> LtasProfile:
    if spec.values.size == 0:
        raise ValueError("empty spectrogram")
    logp = np.log(np.maximum(spec.values, LOG_FLOOR))
    return LtasProfile(logp.mean(axis=1), spec.freqs_hz.copy(), spec.n_frames)


def ltas_corpus(profiles: Sequence[LtasProfile]) -> LtasProfile:
    """Unweighted mean over segments; each segment counts once."""
    if not profiles:
        raise ValueError("no LTAS profiles to average")
    first = profiles[0]
    for p in profiles[1:]:
        if p.values.shape != first.values.shape or not np.array_equal(p.freqs_hz, first.freqs_hz):
            raise ValueError("LTAS profiles have mismatched frequency grids")
    if len(profiles) == 1:
        return first
    total = np.zeros_like(first.values)
    for p in profiles:  # fixed order keeps the reduction bit-reproducible
        total += p.values
    return LtasProfile(total / len(profiles), first.freqs_hz.copy(),
                       sum(p.n_frames_accumulated for p in profiles))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, fmin_hz: float = 20, fmax_hz: float = 3800,
                   fft_size: int = 256, sample_rate: int = 8000) -> np.ndarray:
    """Triangular filters equally spaced in mel, evaluated at FFT bin centers."""
    if not 0 <= fmin_hz < fmax_hz <= sample_rate / 2:
        raise ValueError("require 0 <= fmin < fmax <= sample_rate/2")
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"{n_mels} mel filters too many for a {fft_size}-point FFT: "
                         f"filter {int(empty[0])} covers no bins")
    return fb


def filter_centers_hz(n_mels: int = N_MELS, fmin_hz: float = 20, fmax_hz: float = 3800) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))[1:-1]


def mel_energies(spec: Spectrogram, fb: np.ndarray) -> FeatureMatrix:
    if fb.shape[1] != spec.values.shape[0]:
        raise ValueError(f"filterbank expects {fb.shape[1]} bins, spectrogram has {spec.values.shape[0]}")
    return FeatureMatrix(fb @ spec.values, "mel")


def log_mel_spectrogram(spec: Spectrogram, fb: np.ndarray) -> FeatureMatrix:
    e = mel_energies(spec, fb)
    return FeatureMatrix(np.log(np.maximum(e.values, LOG_FLOOR)), "logmel")


_DEFAULT_FB = None


def _default_fb() -> np.ndarray:
    global _DEFAULT_FB
    if _DEFAULT_FB is None:
        _DEFAULT_FB = mel_filterbank()
    return _DEFAULT_FB


def mel_front_end(buf: AudioBuffer) -> FeatureMatrix:
    """Linear mel energies from the MFCC chain (pre-emphasis included); input to PCEN."""
    return mel_energies(stft(buf, mfcc=True), _default_fb())


def mfcc(buf: AudioBuffer, n_coeffs: int = N_MFCC) -> FeatureMatrix:
    if buf.sample_rate_hz != 8000:
        raise ValueError("MFCC front-end expects 8 kHz audio")
    logmel = log_mel_spectrogram(stft(buf, mfcc=True), _default_fb())
    return FeatureMatrix(cepstra(logmel.values, n_coeffs), "mfcc")


def cepstra(mel_rows: np.ndarray, n_coeffs: int = N_MFCC) -> np.ndarray:
    """Orthonormal DCT-II over the filter axis, truncated to ``n_coeffs`` rows."""
    return dct(mel_rows, type=2, norm="ortho", axis=0)[:n_coeffs]


def inverse_cepstra(c: np.ndarray, n_mels: int = N_MELS) -> np.ndarray:
    padded = np.zeros((n_mels, c.shape[1]))
    padded[:c.shape[0]] = c
    return idct(padded, type=2, norm="ortho", axis=0)


def long_term_spectrum(buf: AudioBuffer, frame_ms: float = 20, fft_size: int = 256) -> tuple[np.ndarray, int]:
    """Time-averaged one-sided power spectrum over non-overlapping frames."""
    frame_len = int(round(frame_ms * buf.sample_rate_hz / 1000))
    t = n_frames(len(buf.samples), frame_len, frame_len)
    if t < 50:
        raise ValueError(f"SNR estimation needs at least 50 frames of {frame_ms} ms, got {t}")
    spec = stft(buf, frame_ms=frame_ms, hop_ms=frame_ms, fft_size=fft_size)
    return spec.values.mean(axis=1), t


def estimate_snr(buf: AudioBuffer, bin_width_db: float = 0.5, noise_pct: float = 15.0) -> SnrReport:
    """Histogram-based SNR of one segment.

    The long-term power spectrum is converted to dB and histogrammed at
    ``bin_width_db`` (bins anchored at the quietest value so gain only shifts the
    histogram). The noise floor per bin is the ``noise_pct`` percentile of that
    histogram; the noise power is that floor spread over the band. Signal power is
    the total power. Stationary tonal or resonant signals keep most bins at the
    floor, so a broadband floor is a usable noise reference.
    """
    psd, t = long_term_spectrum(buf)
    window_energy = float(np.sum(np.hamming(int(round(0.02 * buf.sample_rate_hz))) ** 2))
    interior = psd[1:-1]
    total = psd.sum() / window_energy
    db = 10.0 * np.log10(np.maximum(interior / window_energy, 1e-30))
    lo = db.min()
    idx = np.floor((db - lo) / bin_width_db).astype(int)
    counts = np.bincount(idx)
    cdf = np.cumsum(counts) / counts.sum()
    k = int(np.searchsorted(cdf, noise_pct / 100.0))
    floor_db = lo + (k + 0.5) * bin_width_db
    # a white floor contributes to every one-sided bin; DC and Nyquist count half
    noise_db = floor_db + 10.0 * np.log10(len(psd) - 1)
    signal_db = 10.0 * np.log10(max(total, 1e-30))
    return SnrReport(signal_db - noise_db, signal_db, noise_db, t)


def snr_histogram(reports: Sequence[SnrReport], bin_width_db: float = 2.0) -> Histogram:
    if not reports:
        raise ValueError("no SNR reports to histogram")
    vals = np.array([r.snr_db for r in reports])
    start = np.floor(vals.min() / bin_width_db) * bin_width_db
    n_bins = int(np.floor((vals.max() - start) / bin_width_db)) + 1
    edges = start + bin_width_db * np.arange(n_bins + 1)
    idx = np.minimum(np.floor((vals - start) / bin_width_db).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(edges, counts)


def write_ltas_csv(profile: LtasProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "value"])
        for f, v in zip(profile.freqs_hz, profile.values):
            w.writerow([f"{f:.6f}", repr(float(v))])


def read_ltas_csv(path) -> LtasProfile:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return LtasProfile(np.array([float(r["value"]) for r in rows]),
                       np.array([float(r["freq_hz"]) for r in rows]))


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low_db", "bin_high_db", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", int(c)])
