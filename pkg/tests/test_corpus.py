import hashlib
from dataclasses import replace

import numpy as np
import pytest

from lidbench.audio_io import load_wav
from lidbench.corpus import (CorpusManifest, ManifestEntry, SyntheticCorpusSpec, derive_seed,
                             generate_synthetic_corpus, language_signatures, parallel_map, parse_channel,
                             plan_corpus, read_features, read_manifest, spec_from_text, spec_to_text,
                             write_features, write_manifest)
from lidbench.spectral import FeatureMatrix, ltas_corpus, ltas_segment, stft

SMALL = SyntheticCorpusSpec(corpus_name="S", languages=("aa", "bb"), train_per_language=2,
                            test_per_language=2, utterance_seconds=3.0, seed=5)


def manifest(entries):
    return CorpusManifest("X", [ManifestEntry(*e) for e in entries])


def test_manifest_roundtrip(tmp_path):
    m = manifest([("u1", "a.wav", "en", "s1", "train"), ("u2", "b.wav", "fr", "s2", "test")])
    write_manifest(m, tmp_path / "m.tsv")
    back = read_manifest(tmp_path / "m.tsv")
    assert back.corpus_name == "X" and back.entries == m.entries
    write_manifest(back, tmp_path / "m2.tsv")
    assert (tmp_path / "m.tsv").read_bytes() == (tmp_path / "m2.tsv").read_bytes()
    assert back.resolve(back.entries[0]) == tmp_path / "a.wav"


def test_manifest_errors(tmp_path):
    with pytest.raises(ValueError, match="s1"):
        manifest([("u1", "a", "en", "s1", "train"), ("u2", "b", "en", "s1", "test")]).validate()
    with pytest.raises(ValueError, match="duplicate"):
        manifest([("u1", "a", "en", "s1", "train"), ("u1", "b", "en", "s2", "train")]).validate()
    with pytest.raises(ValueError, match="split"):
        manifest([("u1", "a", "en", "s1", "dev")]).validate()
    with pytest.raises(ValueError, match="empty manifest"):
        manifest([]).validate()
    (tmp_path / "bad.tsv").write_text("utt path\n")
    with pytest.raises(ValueError, match="header"):
        read_manifest(tmp_path / "bad.tsv")


def test_lidf_layout_and_roundtrip(tmp_path):
    x = FeatureMatrix(np.random.default_rng(0).standard_normal((20, 100)), "mfcc")
    write_features(x, tmp_path / "f.lidf")
    raw = (tmp_path / "f.lidf").read_bytes()
    assert len(raw) == 8016 and raw[:4] == b"LIDF"
    # frame-major: the second float is dimension 1 of frame 0
    assert np.frombuffer(raw[16:24], "<f4")[1] == np.float32(x.values[1, 0])
    back = read_features(tmp_path / "f.lidf")
    assert back.kind == "mfcc"
    np.testing.assert_array_equal(back.values, x.values.astype(np.float32))
    write_features(back, tmp_path / "g.lidf")
    assert (tmp_path / "g.lidf").read_bytes() == raw


def test_lidf_errors(tmp_path):
    x = FeatureMatrix(np.zeros((3, 4)), "mfcc")
    write_features(x, tmp_path / "f.lidf")
    raw = (tmp_path / "f.lidf").read_bytes()
    (tmp_path / "m").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="bad magic"):
        read_features(tmp_path / "m")
    (tmp_path / "v").write_bytes(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(ValueError, match="version"):
        read_features(tmp_path / "v")
    (tmp_path / "t").write_bytes(raw[:-1])
    with pytest.raises(ValueError, match="truncated"):
        read_features(tmp_path / "t")


def test_plan_counts_and_disjoint_speakers():
    spec = SyntheticCorpusSpec(train_per_language=20, test_per_language=10)
    m = plan_corpus(spec)
    assert len(m.entries) == 120
    m.validate()


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticCorpusSpec(languages=("one",))
    with pytest.raises(ValueError):
        SyntheticCorpusSpec(utterance_seconds=2.0)
    with pytest.raises(ValueError):
        parse_channel("tilt")
    assert parse_channel("bandpass:300:3400") == ("bandpass", 300.0, 3400.0)


def test_spec_text_roundtrip():
    spec = replace(SMALL, channel="tilt:6", snr_db=10.0)
    assert spec_from_text(spec_to_text(spec)) == spec
    assert spec_from_text(spec_to_text(SMALL)).snr_db is None
    text = "\n".join(line for line in spec_to_text(SMALL).splitlines() if not line.startswith("seed"))
    with pytest.raises(KeyError, match="seed"):
        spec_from_text(text)


def test_derive_seed_stable():
    assert derive_seed(1, "A", "u") == derive_seed(1, "A", "u")
    assert derive_seed(1, "A", "u") != derive_seed(1, "B", "u")


def test_signatures_depend_on_seed_and_languages_only():
    a = language_signatures(3, ("x", "y", "z"))
    b = language_signatures(3, ("z", "x", "y"))
    assert a == b
    slopes = sorted(s.slope_db_per_octave for s in a.values())
    assert np.allclose(np.diff(slopes), slopes[1] - slopes[0])


def digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(folder).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_generation_deterministic_and_parallel_safe(tmp_path, monkeypatch):
    m = generate_synthetic_corpus(SMALL, tmp_path / "a")
    assert len(m.entries) == 8
    assert read_manifest(tmp_path / "a" / "manifest.tsv").entries == m.entries
    buf = load_wav(m.resolve(m.entries[0]))
    assert buf.sample_rate_hz == 8000 and buf.duration_s == 3.0
    monkeypatch.setenv("LIDBENCH_THREADS", "3")
    generate_synthetic_corpus(SMALL, tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_parallel_map_ordered(monkeypatch):
    monkeypatch.setenv("LIDBENCH_THREADS", "4")
    assert parallel_map(lambda v: v * v, range(10)) == [v * v for v in range(10)]


def test_tilted_corpus_ltas_offset_monotone(tmp_path):
    spec = SyntheticCorpusSpec(corpus_name="F", languages=("aa", "bb"), train_per_language=8,
                               test_per_language=1, utterance_seconds=4.0, seed=2)
    flat = generate_synthetic_corpus(spec, tmp_path / "f")
    tilted = generate_synthetic_corpus(replace(spec, channel="tilt:6"), tmp_path / "t")

    def profile(m):
        return ltas_corpus([ltas_segment(stft(load_wav(m.resolve(e)))) for e in m.entries])

    a, b = profile(flat), profile(tilted)
    diff = b.values - a.values
    # the Nyquist bin is a single real bin with half the averaging, so leave it out
    sel = (a.freqs_hz > 500) & (a.freqs_hz < 4000)
    assert np.all(np.diff(diff[sel]) > 0)
    assert diff[-1] > diff[sel][0] + 1.0
