"""WAV loading, resampling to 8 kHz and energy-based silence removal."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TARGET_RATE = 8000
TAPS_PER_FACTOR = 64
ABS_FLOOR_DBFS = -60.0


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class EmptyWavError(WavError):
    pass


class EmptyAfterVadError(ValueError):
    pass


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class VadMask:
    frame_decisions: np.ndarray
    frame_len_samples: int
    hop_samples: int
    n_samples: int

    @property
    def n_voiced(self) -> int:
        return int(np.count_nonzero(self.frame_decisions))


def n_frames(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Return a (T, frame_len) read-only view of overlapping frames."""
    t = n_frames(len(x), frame_len, hop)
    if t == 0:
        raise ValueError(f"signal of {len(x)} samples is shorter than one frame ({frame_len})")
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:t]


def _parse_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError("malformed WAV: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError("malformed WAV: short fmt chunk")
            fmt = body
        elif cid == b"data":
            # tolerate a data chunk whose declared size overruns the file
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise MalformedWavError("malformed WAV: missing fmt or data chunk")
    return fmt, payload


def load_wav(path) -> AudioBuffer:
    """Decode a PCM (8/16-bit int) or IEEE float (32-bit) WAV to mono in [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    fmt, payload = _parse_chunks(path.read_bytes())
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == 0xFFFE and len(fmt) >= 26:
        # WAVE_FORMAT_EXTENSIBLE: the real tag is the first two bytes of the subformat GUID
        tag = struct.unpack("<H", fmt[24:26])[0]
    if tag == 1 and bits == 16:
        dtype, scale = "<i2", 32768.0
    elif tag == 1 and bits == 8:
        dtype, scale = "u1", 128.0
    elif tag == 3 and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedCodecError(f"unsupported WAV encoding: format tag {tag}, {bits} bits")
    if channels == 0 or rate == 0 or block_align == 0:
        raise MalformedWavError("malformed WAV: zero channels, rate or block alignment")
    n = len(payload) // block_align
    if n == 0:
        raise EmptyWavError(f"WAV has no audio frames: {path}")
    raw = np.frombuffer(payload[:n * block_align], dtype=dtype).reshape(n, channels)
    x = raw.astype(np.float64)
    if tag == 1 and bits == 8:
        x -= 128.0
    x /= scale
    if tag == 3:
        x = np.clip(x, -1.0, 1.0)
    return AudioBuffer(x.mean(axis=1), int(rate))


def write_wav(path, buf: AudioBuffer) -> None:
    """Write 16-bit mono PCM."""
    pcm = np.round(np.clip(buf.samples, -1.0, 32767 / 32768) * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def antialias_filter(factor: int) -> np.ndarray:
    """Hamming-windowed sinc low-pass for decimation by ``factor`` (cutoff 0.9 * new Nyquist)."""
    numtaps = TAPS_PER_FACTOR * factor + 1
    cutoff = 0.9 / factor  # as a fraction of the input Nyquist
    n = np.arange(numtaps) - (numtaps - 1) / 2
    h = cutoff * np.sinc(cutoff * n) * np.hamming(numtaps)
    return h / h.sum()


def resample_to_8k(buf: AudioBuffer) -> AudioBuffer:
    if buf.sample_rate_hz == TARGET_RATE:
        return buf
    factor, rem = divmod(buf.sample_rate_hz, TARGET_RATE)
    if rem or factor < 1:
        raise ValueError(f"cannot decimate {buf.sample_rate_hz} Hz to 8000 Hz by an integer factor")
    h = antialias_filter(factor)
    delay = (len(h) - 1) // 2
    y = np.convolve(buf.samples, h)[delay:delay + len(buf.samples)]
    return AudioBuffer(y[::factor].copy(), TARGET_RATE)


def frame_log_energy(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Mean-square frame energy in dBFS (a full-scale square wave is 0 dB)."""
    frames = frame_signal(x, frame_len, hop)
    ms = np.mean(frames * frames, axis=1)
    return 10.0 * np.log10(np.maximum(ms, 1e-30))


def energy_vad(buf: AudioBuffer, frame_ms: float = 20, hop_ms: float = 10,
               drop_db: float = 30) -> VadMask:
    frame_len = int(round(frame_ms * buf.sample_rate_hz / 1000))
    hop = int(round(hop_ms * buf.sample_rate_hz / 1000))
    if len(buf.samples) < frame_len:
        raise ValueError(f"buffer of {len(buf.samples)} samples is shorter than one frame ({frame_len})")
    e = frame_log_energy(buf.samples, frame_len, hop)
    voiced = (e > e.max() - drop_db) & (e > ABS_FLOOR_DBFS)
    return VadMask(voiced, frame_len, hop, len(buf.samples))


def apply_vad(buf: AudioBuffer, mask: VadMask) -> AudioBuffer:
    """Concatenate the hop-sized slice owned by each voiced frame.

    Frame i owns samples [i*hop, (i+1)*hop); the last frame also owns the tail.
    """
    if mask.n_samples != len(buf.samples):
        raise ValueError("VAD mask was computed for a different buffer")
    voiced = np.flatnonzero(mask.frame_decisions)
    if voiced.size == 0:
        raise EmptyAfterVadError("utterance empty after VAD")
    hop = mask.hop_samples
    last = len(mask.frame_decisions) - 1
    pieces = []
    for i in voiced:
        stop = len(buf.samples) if i == last else (i + 1) * hop
        pieces.append(buf.samples[i * hop:stop])
    return AudioBuffer(np.concatenate(pieces), buf.sample_rate_hz)


def load_speech(path) -> AudioBuffer:
    """load -> resample -> silence removal, the standard front of every pipeline."""
    buf = resample_to_8k(load_wav(path))
    return apply_vad(buf, energy_vad(buf))
