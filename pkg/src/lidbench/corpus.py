"""Corpus manifests, LIDF feature files and the synthetic cross-corpora generator."""
from __future__ import annotations

import csv
import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .audio_io import AudioBuffer, write_wav
from .spectral import FeatureMatrix

SPLITS = ("train", "test")
MANIFEST_HEADER = ["utt_id", "path", "language", "speaker", "split"]

FEATURE_MAGIC = b"LIDF"
FEATURE_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sHHII")
KIND_CODES = {"mfcc": 1, "logmel": 2, "mel": 3, "pcen-mel": 4,
              "cepstra-after-cms": 10, "cepstra-after-cmvn": 11, "cepstra-after-wcmvn": 12,
              "cepstra-after-fw": 13, "cepstra-after-rasta": 14, "cepstra-after-pcen": 15}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("LIDBENCH_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Ordered map, parallel up to LIDBENCH_THREADS."""
    items = list(items)
    workers = n_workers()
    if workers == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    language: str
    speaker: str
    split: str


@dataclass
class CorpusManifest:
    corpus_name: str
    entries: list = field(default_factory=list)
    root: Path | None = None  # directory that relative paths resolve against

    def validate(self) -> None:
        if not self.entries:
            raise ValueError("empty manifest")
        seen = set()
        speakers = {s: set() for s in SPLITS}
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for {e.utt_id}")
            if e.utt_id in seen:
                raise ValueError(f"duplicate utt_id {e.utt_id!r}")
            seen.add(e.utt_id)
            speakers[e.split].add(e.speaker)
        shared = sorted(speakers["train"] & speakers["test"])
        if shared:
            raise ValueError(f"speaker {shared[0]!r} appears in both train and test splits")

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    @property
    def languages(self) -> list:
        return sorted({e.language for e in self.entries})


def write_manifest(m: CorpusManifest, path) -> None:
    m.validate()
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# corpus={m.corpus_name}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in m.entries:
            w.writerow([e.utt_id, e.path, e.language, e.speaker, e.split])


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    name = path.stem
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("# corpus="):
        name = lines[0][len("# corpus="):]
        lines = lines[1:]
    rows = list(csv.reader(lines, delimiter="\t"))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise ValueError(f"{path}: expected header {' '.join(MANIFEST_HEADER)}")
    entries = []
    for r in rows[1:]:
        if len(r) != 5:
            raise ValueError(f"{path}: malformed manifest row {r}")
        entries.append(ManifestEntry(*r))
    m = CorpusManifest(name, entries, path.parent)
    m.validate()
    return m


def write_features(x: FeatureMatrix, path) -> None:
    code = KIND_CODES.get(x.kind)
    if code is None:
        raise ValueError(f"no LIDF kind code for {x.kind!r}")
    v = np.asarray(x.values)
    if not np.all(np.isfinite(v)):
        raise ValueError("features must be finite")
    header = FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, code, v.shape[0], v.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(v.T, dtype="<f4").tobytes())


def read_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < FEATURE_HEADER.size:
        raise ValueError("truncated LIDF header")
    magic, version, code, d, t = FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ValueError("bad magic: not a LIDF feature file")
    if version != FEATURE_VERSION:
        raise ValueError(f"LIDF version mismatch: {version}")
    if code not in KIND_NAMES:
        raise ValueError(f"unknown LIDF kind code {code}")
    need = FEATURE_HEADER.size + 4 * d * t
    if len(data) != need:
        raise ValueError(f"truncated LIDF payload: {len(data)} bytes, expected {need}")
    v = np.frombuffer(data, "<f4", d * t, FEATURE_HEADER.size).reshape(t, d).T
    return FeatureMatrix(v.astype(np.float64), KIND_NAMES[code])


# ---------------------------------------------------------------- synthesis

SAMPLE_RATE = 8000


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    corpus_name: str = "A"
    languages: tuple = ("lang0", "lang1", "lang2", "lang3")
    train_per_language: int = 20
    test_per_language: int = 10
    utterance_seconds: float = 10.0
    test_utterance_seconds: float | None = None
    utterances_per_speaker: int = 2
    channel: str = "flat"          # flat | tilt:<dB/oct> | bandpass:<lo>:<hi>
    snr_db: float | None = None    # None: clean
    seed: int = 0

    def __post_init__(self):
        if len(self.languages) < 2:
            raise ValueError("need at least two languages")
        if self.train_per_language < 1 or self.test_per_language < 1:
            raise ValueError("utterance counts must be at least 1")
        if self.utterance_seconds < 3 or (self.test_utterance_seconds or 3) < 3:
            raise ValueError("utterances must last at least 3 s")
        parse_channel(self.channel)

    def seconds(self, split: str) -> float:
        if split == "test" and self.test_utterance_seconds is not None:
            return self.test_utterance_seconds
        return self.utterance_seconds


def parse_channel(channel: str) -> tuple:
    parts = channel.split(":")
    try:
        if parts[0] == "flat" and len(parts) == 1:
            return ("flat",)
        if parts[0] == "tilt" and len(parts) == 2:
            return ("tilt", float(parts[1]))
        if parts[0] == "bandpass" and len(parts) == 3:
            lo, hi = float(parts[1]), float(parts[2])
            if 0 < lo < hi < SAMPLE_RATE / 2:
                return ("bandpass", lo, hi)
    except ValueError:
        pass
    raise ValueError(f"bad channel {channel!r}; expected flat, tilt:<dB/oct> or bandpass:<lo>:<hi>")


def derive_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True)
class LanguageSignature:
    centers_hz: tuple
    bandwidths_hz: tuple
    gains_db: tuple
    background: tuple
    slope_db_per_octave: float
    mean_segment_s: float


ANCHORS_HZ = (600.0, 1500.0, 2600.0)
JITTER_HZ = 100.0
GAIN_SPREAD_DB = 4.0
BANDWIDTH_RANGE_HZ = (60.0, 120.0)
BACKGROUND_RANGE = (0.1, 0.6)
SLOPE_STEP_DB = 4.0
SEGMENT_RANGE_S = (0.05, 0.2)


def language_signatures(seed: int, languages) -> dict:
    """One signature per language, drawn from ``seed`` and the language set.

    Centers scatter around shared anchors. Spectral slopes and syllable rates
    sit on evenly spaced ladders, assigned to languages by a seeded shuffle, so
    every seed gives equally separated languages and a channel tilt of one or
    two ladder steps moves a language onto its neighbour's long-term spectrum.
    """
    names = sorted(languages)
    k = len(names)
    order = np.random.default_rng(derive_seed(seed, "ladders", *names))
    slopes = SLOPE_STEP_DB * (np.arange(k) - (k - 1) / 2.0)
    slopes = slopes[order.permutation(k)]
    segs = np.linspace(*SEGMENT_RANGE_S, k)[order.permutation(k)]
    out = {}
    for i, lang in enumerate(names):
        rng = np.random.default_rng(derive_seed(seed, "language", lang))
        centers = np.array(ANCHORS_HZ) + rng.uniform(-JITTER_HZ, JITTER_HZ, size=3)
        bw = rng.uniform(*BANDWIDTH_RANGE_HZ, size=3)
        gains = rng.uniform(-GAIN_SPREAD_DB, GAIN_SPREAD_DB, size=3)
        bg = rng.uniform(*BACKGROUND_RANGE, size=3)
        out[lang] = LanguageSignature(tuple(centers), tuple(bw), tuple(gains), tuple(bg),
                                      float(slopes[i]), float(segs[i]))
    return out


def resonate(x: np.ndarray, center_hz: float, bandwidth_hz: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth_hz / SAMPLE_RATE)
    theta = 2 * np.pi * center_hz / SAMPLE_RATE
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    y = lfilter([1.0 - r], a, x)
    return y / np.sqrt(np.mean(y * y))


def tilt(x: np.ndarray, db_per_octave: float, ref_hz: float = 1000.0, min_hz: float = 50.0) -> np.ndarray:
    """Zero-phase spectral tilt of ``db_per_octave``, 0 dB at ``ref_hz``."""
    if db_per_octave == 0:
        return x
    spec = np.fft.rfft(x)
    f = np.maximum(np.fft.rfftfreq(len(x), 1.0 / SAMPLE_RATE), min_hz)
    gain_db = db_per_octave * np.log2(f / ref_hz)
    return np.fft.irfft(spec * 10.0 ** (gain_db / 20.0), n=len(x))


def apply_channel(x: np.ndarray, channel: str) -> np.ndarray:
    kind = parse_channel(channel)
    if kind[0] == "flat":
        return x
    if kind[0] == "tilt":
        return tilt(x, kind[1])
    sos = butter(4, [kind[1], kind[2]], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    return sosfilt(sos, x)


FLOOR_DB = -3.0


def synthesize_utterance(sig: LanguageSignature, seconds: float, speaker_tilt: float,
                         gain_db: float, channel: str, snr_db: float | None,
                         rng: np.random.Generator) -> np.ndarray:
    """Noise through the language's resonators, one emphasised per syllable-like segment.

    Emphasis moves between resonators so the language cue lives in the spectral
    dynamics as well as in the long-term spectrum.
    """
    n = int(round(seconds * SAMPLE_RATE))
    excitation = rng.standard_normal(n + 400)
    bands = np.stack([resonate(excitation, c, b) for c, b in zip(sig.centers_hz, sig.bandwidths_hz)])
    bands = bands[:, 400:] * (10.0 ** (np.array(sig.gains_db) / 20.0))[:, None]
    weights = np.zeros((3, n))
    pos = 0
    while pos < n:
        length = int(rng.exponential(sig.mean_segment_s) * SAMPLE_RATE) + 160
        w = np.array(sig.background)
        w[rng.integers(3)] = 1.0
        weights[:, pos:pos + length] = w[:, None]
        pos += length
    ramp = np.hanning(81)
    ramp /= ramp.sum()
    weights = np.stack([np.convolve(w, ramp, mode="same") for w in weights])
    y = (weights * bands).sum(axis=0)
    if FLOOR_DB is not None:
        y = y + np.sqrt(np.mean(y * y) * 10.0 ** (FLOOR_DB / 10.0)) * rng.standard_normal(n)
    y = tilt(y, sig.slope_db_per_octave + speaker_tilt)
    y *= 10.0 ** (gain_db / 20.0) * 0.05 / np.sqrt(np.mean(y * y))
    y = apply_channel(y, channel)
    if snr_db is not None:
        p = np.mean(y * y)
        y = y + rng.standard_normal(n) * np.sqrt(p / 10.0 ** (snr_db / 10.0))
    peak = np.max(np.abs(y))
    if peak > 0.95:
        y *= 0.95 / peak
    return y


def plan_corpus(spec: SyntheticCorpusSpec) -> CorpusManifest:
    entries = []
    for lang in spec.languages:
        for split in SPLITS:
            count = spec.train_per_language if split == "train" else spec.test_per_language
            for i in range(count):
                utt = f"{spec.corpus_name}-{lang}-{split}-{i:04d}"
                spk = f"{spec.corpus_name}-{lang}-{split}-spk{i // spec.utterances_per_speaker:03d}"
                entries.append(ManifestEntry(utt, f"wav/{utt}.wav", lang, spk, split))
    return CorpusManifest(spec.corpus_name, entries)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir) -> CorpusManifest:
    """Write 8 kHz 16-bit WAVs plus ``manifest.tsv``; bytes depend only on ``spec``."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    manifest = plan_corpus(spec)
    manifest.root = out_dir
    sigs = language_signatures(spec.seed, spec.languages)

    def make(entry: ManifestEntry) -> None:
        spk_rng = np.random.default_rng(derive_seed(spec.seed, spec.corpus_name, "speaker", entry.speaker))
        rng = np.random.default_rng(derive_seed(spec.seed, spec.corpus_name, "utt", entry.utt_id))
        y = synthesize_utterance(sigs[entry.language], spec.seconds(entry.split),
                                 spk_rng.uniform(-2.0, 2.0), rng.uniform(-6.0, 6.0),
                                 spec.channel, spec.snr_db, rng)
        write_wav(out_dir / entry.path, AudioBuffer(y, SAMPLE_RATE))

    parallel_map(make, manifest.entries)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


SPEC_KEYS = {
    "corpus_name": str, "languages": lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
    "train_per_language": int, "test_per_language": int, "utterance_seconds": float,
    "test_utterance_seconds": float, "utterances_per_speaker": int, "channel": str,
    "snr_db": lambda s: None if s.strip().lower() == "clean" else float(s), "seed": int,
}
REQUIRED_SPEC_KEYS = ("corpus_name", "languages", "train_per_language", "test_per_language",
                      "utterance_seconds", "channel", "snr_db", "seed")


def parse_key_values(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def spec_from_text(text: str) -> SyntheticCorpusSpec:
    kv = parse_key_values(text)
    missing = [k for k in REQUIRED_SPEC_KEYS if k not in kv]
    if missing:
        raise KeyError(missing[0])
    unknown = sorted(set(kv) - set(SPEC_KEYS))
    if unknown:
        raise ValueError(f"unknown key {unknown[0]!r}")
    return SyntheticCorpusSpec(**{k: SPEC_KEYS[k](v) for k, v in kv.items()})


def spec_to_text(spec: SyntheticCorpusSpec) -> str:
    lines = []
    for k in SPEC_KEYS:
        v = getattr(spec, k)
        if v is None:
            if k == "snr_db":
                lines.append("snr_db=clean")
            continue
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_spec_file(spec: SyntheticCorpusSpec, path) -> None:
    Path(path).write_text(spec_to_text(spec))
