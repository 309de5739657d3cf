"""Feature-level channel/noise compensation: CMS, CMVN, windowed CMVN, feature
warping, RASTA filtering and PCEN. Each maps a (D, T) matrix to a (D, T) matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtri

from .spectral import N_MFCC, FeatureMatrix, cepstra

SIGMA_FLOOR = 1e-10
RASTA_GAIN = 0.1
RASTA_NUM = np.array([2.0, 1.0, 0.0, -1.0, -2.0])  # sums to exactly zero
RASTA_DEN = np.array([1.0, -0.98])

METHODS = {"M0": "cms", "M1": "cmvn", "M2": "wcmvn", "M3": "fw", "M4": "rasta", "M5": "pcen"}
ALIASES = {v: k for k, v in METHODS.items()}


@dataclass(frozen=True)
class PcenConfig:
    s: float = 0.025
    tau_frames: int = 1
    alpha: float = 0.98
    delta: float = 2.0
    r: float = 0.5
    eps: float = 1e-6

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise ValueError("PCEN smoothing coefficient must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValueError("PCEN alpha must lie in (0, 1]")
        if self.r <= 0 or self.eps < 0 or self.tau_frames < 1:
            raise ValueError("PCEN requires r > 0, eps >= 0, tau >= 1")
        if self.r < 1 and self.delta <= 0:
            raise ValueError("PCEN delta must be positive when r < 1")


@dataclass(frozen=True)
class WarpConfig:
    window_frames: int = 301

    def __post_init__(self):
        if self.window_frames < 1 or self.window_frames % 2 == 0:
            raise ValueError("warping window must be an odd positive frame count")


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)


def _wrap(x, values, kind):
    if isinstance(x, FeatureMatrix):
        return FeatureMatrix(values, kind)
    return values


def cms(x):
    v = _values(x)
    return _wrap(x, v - v.mean(axis=1, keepdims=True), "cepstra-after-cms")


def cmvn(x):
    v = _values(x)
    mu = v.mean(axis=1, keepdims=True)
    sigma = np.maximum(v.std(axis=1, keepdims=True), SIGMA_FLOOR)
    return _wrap(x, (v - mu) / sigma, "cepstra-after-cmvn")


def window_bounds(n_frames: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Start/stop of a centred window per frame, slid inward to stay inside [0, T).

    When T <= window every frame sees the whole utterance.
    """
    w = min(window, n_frames)
    t = np.arange(n_frames)
    start = np.clip(t - window // 2, 0, n_frames - w)
    return start, start + w


def windowed_cmvn(x, window_frames: int = 301):
    v = _values(x)
    d, t = v.shape
    start, stop = window_bounds(t, window_frames)
    c1 = np.zeros((d, t + 1))
    c2 = np.zeros((d, t + 1))
    c1[:, 1:] = np.cumsum(v, axis=1)
    c2[:, 1:] = np.cumsum(v * v, axis=1)
    n = (stop - start).astype(np.float64)
    mu = (c1[:, stop] - c1[:, start]) / n
    var = np.maximum((c2[:, stop] - c2[:, start]) / n - mu * mu, 0.0)
    sigma = np.maximum(np.sqrt(var), SIGMA_FLOOR)
    return _wrap(x, (v - mu) / sigma, "cepstra-after-wcmvn")


def feature_warp(x, cfg: WarpConfig = WarpConfig()):
    """Map each value to the standard-normal quantile of its rank within a sliding window.

    Ties rank the earlier frame lower.
    """
    v = _values(x)
    d, t = v.shape
    start, stop = window_bounds(t, cfg.window_frames)
    n = int(stop[0] - start[0])
    out = np.empty_like(v)
    frames = np.arange(t)
    offsets = np.arange(n)
    idx = start[:, None] + offsets[None, :]        # (T, N) frame indices per window
    earlier = idx < frames[:, None]
    for k in range(d):
        row = v[k]
        win = row[idx]
        centre = row[:, None]
        below = (win < centre) | ((win == centre) & earlier)
        rank = below.sum(axis=1) + 1
        out[k] = ndtri((rank - 0.5) / n)
    return _wrap(x, out, "cepstra-after-fw")


def rasta_filter(x):
    """Band-pass each trajectory with 0.1(2 + z^-1 - z^-3 - 2z^-4)/(1 - 0.98 z^-1).

    The z^4 advance of the textbook form is dropped; outputs stay index-aligned
    with inputs. Zero initial state.
    """
    v = _values(x)
    return _wrap(x, RASTA_GAIN * lfilter(RASTA_NUM, RASTA_DEN, v, axis=1), "cepstra-after-rasta")


def rasta_response(freq_cycles_per_frame) -> np.ndarray:
    """Complex frequency response of the delay-aligned RASTA filter."""
    z1 = np.exp(-2j * np.pi * np.asarray(freq_cycles_per_frame, dtype=np.float64))
    num = sum(b * z1 ** k for k, b in enumerate(RASTA_NUM))
    return RASTA_GAIN * num / (1.0 + RASTA_DEN[1] * z1)


def pcen(e, cfg: PcenConfig = PcenConfig()):
    """Per-channel energy normalization of linear (F, T) energies."""
    v = _values(e)
    if np.any(v < 0):
        raise ValueError("PCEN requires nonnegative energies")
    m = np.empty_like(v)
    tau = cfg.tau_frames
    m[:, :tau] = v[:, :tau]
    for t in range(tau, v.shape[1]):
        m[:, t] = cfg.s * v[:, t] + (1.0 - cfg.s) * m[:, t - tau]
    g = v / (m + cfg.eps) ** cfg.alpha
    out = (g + cfg.delta) ** cfg.r - cfg.delta ** cfg.r
    return _wrap(e, out, "pcen-mel")


def normalize_method(method: str) -> str:
    """Canonical "M0".."M5" id, or "baseline"."""
    token = method.strip()
    if token.lower() in ("baseline", "none"):
        return "baseline"
    if token.upper() in METHODS:
        return token.upper()
    if token.lower() in ALIASES:
        return ALIASES[token.lower()]
    raise ValueError(f"unknown compensation method {method!r}; "
                     f"expected baseline, M0..M5 or one of {', '.join(ALIASES)}")


def method_input_kind(method: str) -> str:
    return "mel" if normalize_method(method) == "M5" else "mfcc"


def apply_method(x: FeatureMatrix, method: str, pcen_cfg: PcenConfig = PcenConfig(),
                 n_coeffs: int = N_MFCC) -> FeatureMatrix:
    m = normalize_method(method)
    want = method_input_kind(m)
    if x.kind != want:
        raise ValueError(f"method {m} consumes {want} features, got {x.kind}")
    if m == "baseline":
        return x
    if m == "M5":
        p = pcen(x, pcen_cfg)
        return FeatureMatrix(cepstra(p.values, n_coeffs), "cepstra-after-pcen")
    fn = {"M0": cms, "M1": cmvn, "M2": windowed_cmvn, "M3": feature_warp, "M4": rasta_filter}[m]
    return fn(x)
