"""Corpus-level workflow shared by the command line and the experiment scripts:
analysis, feature extraction, training, cross-corpora evaluation and the
synthetic reproduction run.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio_io import (EmptyAfterVadError, WavError, apply_vad, energy_vad, load_speech, load_wav,
                       resample_to_8k)
from .classifier import TdnnConfig, TdnnModel, TrainReport, save_model, train
from .compensation import PcenConfig, apply_method, method_input_kind, normalize_method
from .corpus import (CorpusManifest, ManifestEntry, SyntheticCorpusSpec, generate_synthetic_corpus,
                     n_workers, parallel_map, read_features, write_features, write_manifest)
from .evaluation import GridCell, evaluate_matrix, write_det, write_grid, write_scores
from .spectral import (FeatureMatrix, estimate_snr, ltas_corpus, ltas_segment, mel_front_end, mfcc,
                       snr_histogram, stft, write_histogram_csv, write_ltas_csv)

log = logging.getLogger("lidbench")

ALL_METHODS = ("baseline", "M0", "M1", "M2", "M3", "M4", "M5")
VAL_FRACTION = 0.1


# ---------------------------------------------------------------- analysis

@dataclass
class AnalysisResult:
    corpus_name: str
    n_ok: int
    failures: list = field(default_factory=list)  # (utt_id, message)


def analyze_corpus(manifest: CorpusManifest, out_dir) -> AnalysisResult:
    """Write ``ltas_<corpus>.csv`` and ``snr_hist_<corpus>.csv``.

    LTAS uses silence-removed speech; SNR uses the full resampled recording,
    whose pauses carry the noise floor. Unreadable entries are reported and skipped.
    """
    manifest.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry: ManifestEntry):
        try:
            buf = resample_to_8k(load_wav(manifest.resolve(entry)))
            speech = apply_vad(buf, energy_vad(buf))
            return ltas_segment(stft(speech)), estimate_snr(buf)
        except (OSError, WavError, EmptyAfterVadError, ValueError) as exc:
            return str(exc)

    profiles, reports, failures = [], [], []
    for entry, res in zip(manifest.entries, parallel_map(one, manifest.entries)):
        if isinstance(res, str):
            failures.append((entry.utt_id, res))
        else:
            profiles.append(res[0])
            reports.append(res[1])
    if profiles:
        write_ltas_csv(ltas_corpus(profiles), out_dir / f"ltas_{manifest.corpus_name}.csv")
        write_histogram_csv(snr_histogram(reports), out_dir / f"snr_hist_{manifest.corpus_name}.csv")
    return AnalysisResult(manifest.corpus_name, len(profiles), failures)


# ---------------------------------------------------------------- features

def front_end(speech, method: str) -> FeatureMatrix:
    """Uncompensated features a method consumes: MFCC, or linear mel energies for PCEN."""
    return mel_front_end(speech) if method_input_kind(method) == "mel" else mfcc(speech)


def extract_features(speech, method: str, pcen_cfg: PcenConfig = PcenConfig()) -> FeatureMatrix:
    return apply_method(front_end(speech, method), method, pcen_cfg)


@dataclass
class ExtractResult:
    manifest: CorpusManifest
    skipped: list = field(default_factory=list)  # (utt_id, reason)


def extract_corpus(manifest: CorpusManifest, method: str, out_dir,
                   pcen_cfg: PcenConfig = PcenConfig()) -> ExtractResult:
    """Silence removal, front end and compensation for every utterance.

    Writes ``feats/<utt_id>.lidf`` plus ``features.tsv``, a manifest whose paths
    point at the feature files. Utterances empty after VAD are skipped and counted.
    """
    method = normalize_method(method)
    manifest.validate()
    out_dir = Path(out_dir)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)

    def one(entry: ManifestEntry):
        try:
            x = extract_features(load_speech(manifest.resolve(entry)), method, pcen_cfg)
        except EmptyAfterVadError as exc:
            return str(exc)
        rel = f"feats/{entry.utt_id}.lidf"
        write_features(x, out_dir / rel)
        return rel

    kept, skipped = [], []
    for entry, res in zip(manifest.entries, parallel_map(one, manifest.entries)):
        if res.startswith("feats/"):
            kept.append(replace(entry, path=res))
        else:
            skipped.append((entry.utt_id, res))
            log.warning("skipped %s: %s", entry.utt_id, res)
    fm = CorpusManifest(manifest.corpus_name, kept, out_dir)
    write_manifest(fm, out_dir / "features.tsv")
    return ExtractResult(fm, skipped)


def load_split(manifest: CorpusManifest, split: str) -> list:
    """``(entry, FeatureMatrix)`` pairs of a feature manifest's split."""
    entries = manifest.split(split)
    feats = parallel_map(lambda e: read_features(manifest.resolve(e)), entries)
    return list(zip(entries, feats))


# ---------------------------------------------------------------- training

def stratified_split(items: Sequence, seed: int, fraction: float = VAL_FRACTION):
    """Hold out ``fraction`` of each language (at least one item) for validation.

    ``items`` are ``(features, language)`` pairs; speakers may straddle the split.
    """
    rng = np.random.default_rng([seed, 2])
    train_items, val_items = [], []
    for lang in sorted({lang for _, lang in items}):
        idx = [i for i, (_, l) in enumerate(items) if l == lang]
        idx = [idx[i] for i in rng.permutation(len(idx))]
        k = max(1, int(round(fraction * len(idx))))
        val_items += [items[i] for i in sorted(idx[:k])]
        train_items += [items[i] for i in sorted(idx[k:])]
    return train_items, val_items


def train_on_items(items: Sequence, cfg: TdnnConfig, progress=None) -> tuple[TdnnModel, TrainReport]:
    languages = sorted({lang for _, lang in items})
    if len(languages) < 2:
        raise ValueError(f"training data contains a single language ({languages[0] if languages else 'none'}); "
                         "need at least two")
    if len(items) < 2 * len(languages):
        raise ValueError("need at least two training utterances per language")
    dim = items[0][0].shape[0]
    cfg = replace(cfg, input_dim=dim)
    tr, val = stratified_split(items, cfg.seed)
    return train(cfg, tr, val, languages, log=progress)


def write_train_report(report: TrainReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "best"])
        for i, (a, b, c) in enumerate(zip(report.train_loss, report.val_loss, report.val_accuracy), 1):
            w.writerow([i, f"{a:.9g}", f"{b:.9g}", f"{c:.6f}", int(i == report.best_epoch)])


def train_from_manifest(manifest: CorpusManifest, cfg: TdnnConfig, out_dir, progress=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [(x.values, e.language) for e, x in load_split(manifest, "train")]
    if not items:
        raise ValueError(f"feature manifest for {manifest.corpus_name} has no training utterances")
    model, report = train_on_items(items, cfg, progress)
    save_model(model, out_dir / f"model_{manifest.corpus_name}.lidm")
    write_train_report(report, out_dir / f"train_report_{manifest.corpus_name}.csv")
    return model, report


# ---------------------------------------------------------------- evaluation

def scoring_items(pairs) -> list:
    return [(e.utt_id, e.language, x) for e, x in pairs]


def evaluate_and_write(models: Mapping[str, TdnnModel], test_sets: Mapping[str, list],
                       durations: Sequence[float], out_dir) -> list[GridCell]:
    """Score every cell and write ``scores_*.tsv``, ``det_*.csv`` and ``results_grid.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = evaluate_matrix(models, test_sets, durations)
    for c in cells:
        stem = f"{c.train_corpus}_{c.test_corpus}_{c.duration_s:g}s"
        write_scores(c.scores, out_dir / f"scores_{stem}.tsv")
        write_det(c.curve, out_dir / f"det_{stem}.csv")
    write_grid(cells, out_dir / "results_grid.csv")
    return cells


def summarize(cells: Sequence[GridCell]) -> dict:
    """Mean EER and C_avg over within-corpora cells and over cross-corpora cells."""
    within = [c for c in cells if c.within_corpora]
    cross = [c for c in cells if not c.within_corpora]

    def mean(group, attr):
        return float(np.mean([getattr(c, attr) for c in group])) if group else float("nan")

    return {"within_eer_pct": mean(within, "eer_pct"), "cross_eer_pct": mean(cross, "eer_pct"),
            "within_cavg_x100": mean(within, "cavg_x100"), "cross_cavg_x100": mean(cross, "cavg_x100")}


# ---------------------------------------------------------------- reproduction

@dataclass(frozen=True)
class ReproduceConfig:
    seed: int = 0
    preset: str = "desk"
    languages: tuple = ("lang0", "lang1", "lang2", "lang3")
    train_per_language: int = 30
    test_per_language: int = 8
    train_seconds: float = 4.0
    test_seconds: float = 10.0
    mismatch_channel: str = "tilt:6"
    mismatch_snr_db: float = 10.0
    durations: tuple = (3.0, 6.0, 9.0)
    methods: tuple = ALL_METHODS

    def corpus_specs(self) -> dict:
        base = SyntheticCorpusSpec(corpus_name="A", languages=self.languages,
                                   train_per_language=self.train_per_language,
                                   test_per_language=self.test_per_language,
                                   utterance_seconds=self.train_seconds,
                                   test_utterance_seconds=self.test_seconds, seed=self.seed)
        return {"A": base, "B": replace(base, corpus_name="B", channel=self.mismatch_channel,
                                        snr_db=self.mismatch_snr_db)}


COMPARISON_HEADER = ["method", "within_eer_pct", "cross_eer_pct", "within_cavg_x100", "cross_cavg_x100"]


def _front_ends(manifest: CorpusManifest) -> list:
    """Per utterance: (entry, mfcc, mel energies), computed once for all methods."""
    def one(entry):
        speech = load_speech(manifest.resolve(entry))
        return entry, mfcc(speech), mel_front_end(speech)
    return parallel_map(one, manifest.entries)


def run_method(method: str, corpora: Mapping[str, list], cfg: TdnnConfig,
               durations: Sequence[float]) -> tuple[dict, dict, list]:
    """Train one model per corpus and cross-evaluate them, all in memory."""
    models, reports, tests = {}, {}, {}
    for name, rows in corpora.items():
        feats = [(e, apply_method(mel if method == "M5" else mf, method)) for e, mf, mel in rows]
        items = [(x.values, e.language) for e, x in feats if e.split == "train"]
        models[name], reports[name] = train_on_items(items, cfg)
        tests[name] = scoring_items([(e, x) for e, x in feats if e.split == "test"])
    return models, reports, evaluate_matrix(models, tests, durations)


def _run_method_job(args):
    return run_method(*args)


def reproduce(out_dir, rc: ReproduceConfig = ReproduceConfig(), progress=print) -> list[dict]:
    """Generate corpora A (clean, flat) and B (tilted, noisy), then run every method.

    Writes ``corpora/``, ``<method>/`` with grid, scores, DET curves, models and
    training reports, and ``comparison.csv``. Returns the comparison rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = [normalize_method(m) for m in rc.methods]
    corpora = {}
    for name, spec in rc.corpus_specs().items():
        m = generate_synthetic_corpus(spec, out_dir / "corpora" / name)
        corpora[name] = _front_ends(m)
        progress(f"corpus {name}: {len(m.entries)} utterances")
    cfg = TdnnConfig.preset(rc.preset, seed=rc.seed)
    jobs = [(m, corpora, cfg, rc.durations) for m in methods]
    workers = min(n_workers(), len(jobs))
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for method, result in zip(methods, pool.map(_run_method_job, jobs)):
                rows.append(_write_method(out_dir / method, method, *result, progress))
    else:
        for method, job in zip(methods, jobs):
            rows.append(_write_method(out_dir / method, method, *_run_method_job(job), progress))
    write_comparison(rows, out_dir / "comparison.csv")
    return rows


def _write_method(mdir: Path, method: str, models, reports, cells, progress) -> dict:
    mdir.mkdir(exist_ok=True)
    for name in models:
        save_model(models[name], mdir / f"model_{name}.lidm")
        write_train_report(reports[name], mdir / f"train_report_{name}.csv")
    for c in cells:
        stem = f"{c.train_corpus}_{c.test_corpus}_{c.duration_s:g}s"
        write_scores(c.scores, mdir / f"scores_{stem}.tsv")
        write_det(c.curve, mdir / f"det_{stem}.csv")
    write_grid(cells, mdir / "results_grid.csv")
    row = {"method": method, **summarize(cells)}
    progress(f"{method}: within EER {row['within_eer_pct']:.2f}%  cross EER {row['cross_eer_pct']:.2f}%")
    return row


def write_comparison(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for r in rows:
            w.writerow([r["method"]] + [f"{r[k]:.4f}" for k in COMPARISON_HEADER[1:]])


def read_comparison(path) -> dict:
    with open(path, newline="") as fh:
        return {r["method"]: {k: float(v) for k, v in r.items() if k != "method"}
                for r in csv.DictReader(fh)}
